"""Knowledge-aware attention over the unified graph and the global aggregation layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .graph import UnifiedGraph
from .params import ParameterStore
from .transh import project

COS_EPS = 1e-12


def cosine(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    denom = np.linalg.norm(x, axis=-1) * np.linalg.norm(y, axis=-1)
    return np.sum(x * y, axis=-1) / np.maximum(denom, COS_EPS)


def edge_logit(v, r, t, store: ParameterStore):
    """cos(e_v_perp + d_r, e_t_perp); vectorizes over array arguments."""
    ent = store.params["entity"]
    w = store.params["rel_w"][r]
    d = store.params["rel_d"][r]
    return cosine(project(ent[v], w) + d, project(ent[t], w))


@dataclass
class AttentionCache:
    """Per-head softmax of edge logits, aligned with the graph's CSR order."""

    indptr: np.ndarray
    relations: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        self.cdf = _row_cdf(self.indptr, self.weights)

    def row(self, v: int):
        sl = slice(self.indptr[v], self.indptr[v + 1])
        return self.relations[sl], self.tails[sl], self.weights[sl]

    @property
    def entity_count(self):
        return len(self.indptr) - 1


def _row_cdf(indptr, weights):
    if len(weights) == 0:
        return np.zeros(0)
    cum = np.cumsum(weights)
    counts = np.diff(indptr)
    row_base = np.concatenate([[0.0], cum])[indptr[:-1]]
    cdf = cum - np.repeat(row_base, counts)
    cdf[indptr[1:][counts > 0] - 1] = 1.0
    return cdf


def build_attention_cache(graph: UnifiedGraph, store: ParameterStore, epoch: int = 0) -> AttentionCache:
    logits = edge_logit(graph.heads, graph.relations, graph.tails, store)
    weights = kernels.segment_softmax(logits, graph.indptr)
    return AttentionCache(graph.indptr, graph.relations, graph.tails, weights, epoch)


def uniform_attention_cache(graph: UnifiedGraph, epoch: int = 0) -> AttentionCache:
    """Uniform rows, used when global attention is ablated away."""
    deg = graph.degree
    weights = 1.0 / np.repeat(np.maximum(deg, 1), deg).astype(np.float64)
    return AttentionCache(graph.indptr, graph.relations, graph.tails, weights, epoch)


def aggregate_neighborhood(v: int, cache: AttentionCache, embeddings):
    _, tails, w = cache.row(v)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if len(tails) == 0:
        return np.zeros(embeddings.shape[1])
    return w @ embeddings[tails]


def gather_csr_rows(indptr, nodes):
    """Sub-CSR for ``nodes``: returns (sub_indptr, global entry ids)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    counts = indptr[nodes + 1] - indptr[nodes]
    sub_indptr = np.zeros(len(nodes) + 1, dtype=np.int64)
    np.cumsum(counts, out=sub_indptr[1:])
    entries = np.repeat(indptr[nodes] - sub_indptr[:-1], counts) + np.arange(sub_indptr[-1])
    return sub_indptr, entries


def _layer_names(d):
    suffix = "" if d == 0 else f"_{d + 1}"
    return f"W1{suffix}", f"b1{suffix}"


def kagcn_forward(tape: ad.Tape, graph: UnifiedGraph, cache: AttentionCache, nodes, depth=1, dropout=0.0, rng=None):
    """Global embeddings for ``nodes`` (unique, sorted) as a tape variable.

    Attention weights enter as constants.  For ``depth`` > 1 the receptive
    field is widened one hop per extra layer.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    sets = [None] * (depth + 1)
    sets[depth] = nodes
    for layer in range(depth, 0, -1):
        _, entries = gather_csr_rows(cache.indptr, sets[layer])
        sets[layer - 1] = np.union1d(sets[layer], cache.tails[entries])
    h = tape.rows("entity", sets[0])
    for layer in range(1, depth + 1):
        prev, cur = sets[layer - 1], sets[layer]
        sub_indptr, entries = gather_csr_rows(cache.indptr, cur)
        cols = np.searchsorted(prev, cache.tails[entries])
        neigh = ad.spmm(sub_indptr, cols, cache.weights[entries], h)
        own = ad.take(h, np.searchsorted(prev, cur))
        w_name, b_name = _layer_names(layer - 1)
        h = ad.leaky_relu(ad.linear(ad.concat([own, neigh]), tape.param(w_name), tape.param(b_name)))
        h = ad.dropout(h, dropout, rng)
    return h


def kagcn_layer(graph: UnifiedGraph, cache: AttentionCache, store: ParameterStore, depth=1, dropout=0.0, rng=None):
    """e^(1) for every entity as a plain array."""
    w_name, _ = _layer_names(depth - 1)
    tape = ad.Tape(store)
    nodes = np.arange(graph.entity_count)
    out = kagcn_forward(tape, graph, cache, nodes, depth=depth, dropout=dropout, rng=rng)
    if out.value.shape[1] != store.params[w_name].shape[0]:
        raise ValueError("shape mismatch in aggregation layer")
    return out.value
