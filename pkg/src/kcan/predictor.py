"""Two-tower output head, pair scoring and the target BPR objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .graph import UnifiedGraph
from .kagcn import AttentionCache, kagcn_forward
from .lcsan import lcsan_forward
from .params import GradientSet, ParameterStore, l2_penalty, touched_penalty
from .sampler import SubgraphBatch, sample_subgraphs


def uses_global(ablation: str) -> bool:
    return ablation in ("full", "no_lc")


def uses_conditional(ablation: str) -> bool:
    return ablation in ("full", "no_gk")


def output_repr(e_global, e_local, store: ParameterStore):
    """W^o (e_global || e_local) + b^o."""
    x = np.concatenate([np.asarray(e_global, dtype=np.float64), np.asarray(e_local, dtype=np.float64)], axis=-1)
    wo = store["Wo"]
    if x.shape[-1] != wo.shape[1]:
        raise ValueError(f"output head expects {wo.shape[1]} inputs, got {x.shape[-1]}")
    return x @ wo.T + store["bo"]


def pair_score(eo_user, eo_item):
    return np.sum(np.asarray(eo_user) * np.asarray(eo_item), axis=-1)


def bpr_loss(pos, neg):
    """mean -ln sigmoid(pos - neg)."""
    return float(np.mean(np.logaddexp(0.0, -(np.asarray(pos) - np.asarray(neg)))))


@dataclass
class ForwardTrace:
    """Intermediate values kept for explanation export."""

    batch: SubgraphBatch
    alpha1: np.ndarray | None
    alphas: list


def forward_scores(
    tape: ad.Tape,
    graph: UnifiedGraph,
    cache: AttentionCache,
    batch: SubgraphBatch,
    config: TrainConfig,
    rng=None,
    record: list | None = None,
):
    """Scores for every target of ``batch`` as a tape variable.

    ``rng`` drives dropout; pass None for inference.
    """
    rate = config.dropout if rng is not None else 0.0
    uniq, inv = np.unique(batch.node_entity, return_inverse=True)
    if uses_global(config.ablation):
        g = kagcn_forward(tape, graph, cache, uniq, depth=config.kagcn_depth, dropout=rate, rng=rng)
    else:
        g = tape.rows("entity", uniq)
    u_rows, i_rows = inv[batch.target_local[:, 0]], inv[batch.target_local[:, 1]]
    e1_u, e1_i = ad.take(g, u_rows), ad.take(g, i_rows)
    if uses_conditional(config.ablation):
        e_target = ad.concat([e1_u, e1_i])
        alpha1 = cache.weights[batch.edge_id]
        h = lcsan_forward(tape, batch, g, inv, e_target, alpha1, config.hops, dropout=rate, rng=rng, record=record)
        h_u, h_i = ad.take(h, batch.target_local[:, 0]), ad.take(h, batch.target_local[:, 1])
    else:
        zeros = np.zeros((batch.size, config.tower[-1]))
        h_u = h_i = zeros
    wo, bo = tape.param("Wo"), tape.param("bo")
    eo_u = ad.linear(ad.concat([e1_u, h_u]), wo, bo)
    eo_i = ad.linear(ad.concat([e1_i, h_i]), wo, bo)
    return ad.rowdot(eo_u, eo_i)


def sample_hops(config: TrainConfig) -> int:
    return config.hops if uses_conditional(config.ablation) else 0


def target_loss_batch(
    store: ParameterStore,
    graph: UnifiedGraph,
    cache: AttentionCache,
    batch: SubgraphBatch,
    config: TrainConfig,
    rng=None,
    lam: float | None = None,
):
    """BPR loss over a batch whose first half are positive targets and second half negatives.

    Returns ``(loss, data_loss, grads)``; ``loss`` adds the L2 penalty on the
    touched parameters.
    """
    lam = config.l2 if lam is None else lam
    if batch.size % 2:
        raise ValueError("batch must hold positive and negative targets in equal numbers")
    tape = ad.Tape(store)
    scores = forward_scores(tape, graph, cache, batch, config, rng=rng)
    half = batch.size // 2
    pos = ad.take(scores, np.arange(half))
    neg = ad.take(scores, np.arange(half, 2 * half))
    loss_var = ad.mean(ad.softplus(ad.sub(neg, pos)))
    data_loss = float(loss_var.value)
    if not np.isfinite(data_loss):
        raise FloatingPointError("non-finite target loss")
    grads = tape.backward(loss_var)
    loss = data_loss
    if lam > 0:
        pen, pen_grads = touched_penalty(store, lam, grads)
        loss += pen
        grads = grads.merge(pen_grads)
    return loss, data_loss, grads


def total_loss(kg_part: float, target_part: float, store: ParameterStore, lam: float) -> float:
    """L_kg + L_T + lam * ||Theta||^2 over every parameter."""
    value, _ = l2_penalty(store, lam) if lam > 0 else (0.0, GradientSet())
    return float(kg_part) + float(target_part) + value


class Scorer:
    """Inference-mode scorer for (user entity, item entity) pairs.

    Every call samples fresh subgraphs from ``rng``; dropout is off.
    """

    def __init__(self, store, graph, cache, config, chunk=None):
        self.store = store
        self.graph = graph
        self.cache = cache
        self.config = config
        self.chunk = chunk or 2 * config.target_batch

    def __call__(self, users, items, rng):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.empty(len(users))
        hops = sample_hops(self.config)
        for start in range(0, len(users), self.chunk):
            sl = slice(start, start + self.chunk)
            targets = np.stack([users[sl], items[sl]], axis=1)
            batch = sample_subgraphs(targets, hops, self.config.neighbors, self.cache, rng)
            tape = ad.Tape(self.store)
            out[sl] = forward_scores(tape, self.graph, self.cache, batch, self.config).value
        return out

    def explain(self, target, rng):
        """Scores plus sampled subgraph and per-layer attention for one target."""
        batch = sample_subgraphs(np.asarray(target).reshape(1, 2), sample_hops(self.config), self.config.neighbors, self.cache, rng)
        record: list = []
        tape = ad.Tape(self.store)
        score = forward_scores(tape, self.graph, self.cache, batch, self.config, record=record)
        return float(score.value[0]), ForwardTrace(batch, self.cache.weights[batch.edge_id], record)
