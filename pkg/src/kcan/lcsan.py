"""Target-conditioned attention over sampled subgraphs."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .params import ParameterStore
from .sampler import SubgraphBatch

LEAKY_SLOPE = 0.2


def target_repr(e_user, e_item):
    """User-first concatenation of the pair's global embeddings."""
    return np.concatenate([np.asarray(e_user, dtype=np.float64), np.asarray(e_item, dtype=np.float64)], axis=-1)


def entity_target_score(e_tail, e_target, layer: int, store: ParameterStore):
    """a^T [W_t e_target || W_e e_tail]; broadcasts over leading axes of ``e_tail``."""
    wt, we, a = store[f"Wt{layer}"], store[f"We{layer}"], store[f"a{layer}"]
    if wt.shape[1] != np.shape(e_target)[-1] or we.shape[1] != np.shape(e_tail)[-1]:
        raise ValueError(f"input dims do not match layer {layer} weights")
    half = wt.shape[0]
    return (wt @ e_target) @ a[:half] + np.asarray(e_tail) @ we.T @ a[half:]


def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def conditional_attention(alpha1, alpha2):
    """softmax(LeakyReLU(alpha1 * alpha2)) over one node's sampled neighbors."""
    alpha1 = np.asarray(alpha1, dtype=np.float64)
    if alpha1.size == 0:
        return np.zeros(0)
    z = _leaky(alpha1 * np.asarray(alpha2, dtype=np.float64))
    return kernels.segment_softmax(z, np.array([0, z.size]))


def lcsan_forward(
    tape: ad.Tape,
    batch: SubgraphBatch,
    source,
    node_row,
    e_target,
    alpha1,
    hops: int,
    dropout=0.0,
    rng=None,
    record=None,
):
    """Stack ``hops`` conditional-attention layers over ``batch``.

    Layer-1 inputs of local node ``n`` are ``source[node_row[n]]``, which lets
    the first layer read global embeddings without copying them per subgraph.
    ``e_target`` has one row per subgraph and ``alpha1`` is the cached global
    attention per batch edge.

    Local nodes are numbered by discovery hop, so nodes within ``d`` hops of
    the targets form a prefix.  Layer j only produces outputs for nodes within
    ``hops - j`` hops and only reads edges up to hop ``hops - j + 1``; that is
    exactly what the targets' final outputs depend on.  Returns the final
    outputs for the target prefix.  ``record`` (a list) receives per-layer
    (edge mask, alpha) pairs.
    """
    node_sub = batch.node_sub
    node_row = np.asarray(node_row, dtype=np.int64)
    for j in range(1, hops + 1):
        depth_in = hops - j + 1
        n_out = int(np.searchsorted(batch.node_hop, hops - j, side="right"))
        mask = batch.edge_mask(depth_in)
        heads = batch.edge_head[mask]
        tail_local = batch.edge_tail[mask]
        tail_rows = node_row[tail_local]
        indptr = np.searchsorted(heads, np.arange(n_out + 1)).astype(np.int64)
        wt, we, a = tape.param(f"Wt{j}"), tape.param(f"We{j}"), tape.param(f"a{j}")
        att = wt.value.shape[0]
        target_part = ad.matvec(ad.linear(e_target, wt), ad.part(a, 0, att))
        entity_part = ad.matvec(ad.linear(source, we), ad.part(a, att, 2 * att))
        alpha2 = ad.add(ad.take(target_part, node_sub[tail_local]), ad.take(entity_part, tail_rows))
        logits = ad.leaky_relu(ad.mul(alpha1[mask], alpha2), LEAKY_SLOPE)
        alpha = ad.segment_softmax(logits, indptr)
        if record is not None:
            record.append((mask, alpha.value))
        neigh = ad.spmm(indptr, tail_rows, alpha, source)
        own = ad.take(source, node_row[:n_out])
        out = ad.linear(ad.concat([own, neigh]), tape.param(f"W{j + 1}"), tape.param(f"b{j + 1}"))
        source = ad.dropout(ad.leaky_relu(out, LEAKY_SLOPE), dropout, rng)
        node_row = np.arange(n_out)
    return source


def lcsan_layer(batch: SubgraphBatch, h, e_target, alpha1, layer: int, store: ParameterStore, max_hop=None):
    """One conditional-attention layer as plain arrays.

    Returns ``(outputs, alpha)`` where ``alpha`` is aligned with the batch
    edges kept by ``max_hop`` (all edges by default).
    """
    max_hop = batch.hops if max_hop is None else max_hop
    mask = batch.edge_mask(max_hop)
    indptr = batch.indptr(max_hop)
    tails = batch.edge_tail[mask]
    h = np.asarray(h, dtype=np.float64)
    e_target = np.asarray(e_target, dtype=np.float64)
    wt, we, a = store[f"Wt{layer}"], store[f"We{layer}"], store[f"a{layer}"]
    if we.shape[1] != h.shape[1] or wt.shape[1] != e_target.shape[1]:
        raise ValueError(f"input dims do not match layer {layer} weights")
    att = wt.shape[0]
    alpha2 = ((e_target @ wt.T) @ a[:att])[batch.node_sub] + (h @ we.T) @ a[att:]
    alpha = kernels.segment_softmax(_leaky(np.asarray(alpha1)[mask] * alpha2[tails]), indptr)
    neigh = kernels.spmm(indptr, tails, alpha, h)
    w, b = store[f"W{layer + 1}"], store[f"b{layer + 1}"]
    out = _leaky(np.concatenate([h, neigh], axis=1) @ w.T + b)
    return out, alpha
