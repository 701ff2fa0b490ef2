"""Toy problems and the composed-loss evaluator used for gradient checking."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .graph import (
    IdMap,
    InteractionGraph,
    KnowledgeTriples,
    sample_corrupt_tails,
    sample_negative_items,
    split_leave_one_out,
    unify,
)
from .params import init_params
from .predictor import sample_hops, target_loss_batch
from .sampler import sample_subgraphs
from .trainer import make_cache, stream, training_pairs
from .transh import kg_loss_batch


def toy_problem(seed: int = 0):
    """10 entities: 3 users, 4 items, 3 attributes."""
    users = IdMap(["u0", "u1", "u2"])
    items = IdMap(["i0", "i1", "i2", "i3"])
    edges = np.array([[0, 0], [0, 1], [0, 2], [1, 1], [1, 2], [1, 3], [2, 0], [2, 3]])
    inter = InteractionGraph(users, items, edges)
    ents = IdMap(["i0", "i1", "i2", "i3", "a0", "a1", "a2"])
    rels = IdMap(["genre", "style"])
    trip = np.array([[0, 0, 4], [1, 0, 4], [2, 0, 5], [3, 0, 5], [0, 1, 6], [3, 1, 6]])
    kg = KnowledgeTriples(ents, rels, trip)
    alignment = {f"i{k}": f"i{k}" for k in range(4)}
    split = split_leave_one_out(inter, seed)
    graph = unify(inter.with_edges(split.train_edges), kg, alignment)
    return inter, split, graph


def toy_config(**overrides) -> TrainConfig:
    base = dict(embed_dim=6, tower=(6, 5, 4), out_dim=4, hops=2, neighbors=3, l2=1e-3, dropout=0.1, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def composed_loss_evaluator(graph, split, config: TrainConfig, seed: int = 0, kg_size: int = 8, target_size: int = 4):
    """Deterministic ``store -> (L_kg + L_T + penalties, grads)`` over fixed batches.

    Negatives, subgraphs and the attention cache are frozen from the initial
    store; dropout masks are redrawn from the same seed on every call.
    """
    store0 = init_params(config, graph.entity_count, graph.relation_count, stream(seed, 0))
    rng = stream(seed, 99)
    idx = rng.choice(len(graph.triples), size=min(kg_size, len(graph.triples)), replace=False)
    h, r, t = graph.triples[idx].T
    kg_batch = np.stack([h, r, t, sample_corrupt_tails(graph, h, r, rng)], axis=1)
    cache = make_cache(graph, store0, config)
    pairs = training_pairs(graph, split)
    pos = pairs[rng.choice(len(pairs), size=min(target_size, len(pairs)), replace=False)]
    neg = sample_negative_items(graph, pos[:, 0], rng)
    targets = np.concatenate([pos, np.stack([pos[:, 0], neg], axis=1)])
    batch = sample_subgraphs(targets, sample_hops(config), config.neighbors, cache, rng)

    def evaluate(store):
        kg_loss, kg_grads = kg_loss_batch(store, kg_batch, config.norm, config.l2)
        t_loss, _, t_grads = target_loss_batch(store, graph, cache, batch, config, rng=stream(seed, 7))
        return kg_loss + t_loss, kg_grads.merge(t_grads)

    return store0, evaluate

