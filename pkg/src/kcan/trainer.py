"""Alternating two-phase training loop and ablation runs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .graph import DataSplit, UnifiedGraph, sample_corrupt_tails, sample_negative_items
from .kagcn import AttentionCache, build_attention_cache, uniform_attention_cache
from .params import ParameterStore, adam_step, init_params, save_snapshot
from .predictor import Scorer, sample_hops, target_loss_batch, uses_global
from .sampler import sample_subgraphs
from .transh import kg_loss_batch

log = logging.getLogger(__name__)

PHASE_KG, PHASE_TARGET, PHASE_EVAL, PHASE_INIT = 1, 2, 3, 0


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one (phase, epoch, batch, ...) coordinate."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


class TrainingError(RuntimeError):
    pass


@dataclass
class LossTrace:
    rows: list = field(default_factory=list)  # (epoch, phase, loss)

    def add(self, epoch, phase, loss):
        self.rows.append((int(epoch), phase, float(loss)))

    def series(self, phase) -> np.ndarray:
        return np.array([loss for _, p, loss in self.rows if p == phase])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "phase", "loss"])
            for epoch, phase, loss in self.rows:
                writer.writerow([epoch, phase, repr(loss)])

    @classmethod
    def from_csv(cls, path) -> "LossTrace":
        trace = cls()
        with Path(path).open(encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                trace.add(int(row["epoch"]), row["phase"], float(row["loss"]))
        return trace


@dataclass
class TrainResult:
    store: ParameterStore
    cache: AttentionCache
    trace: LossTrace
    config: TrainConfig

    def scorer(self, graph: UnifiedGraph) -> Scorer:
        return Scorer(self.store, graph, self.cache, self.config)


def training_pairs(graph: UnifiedGraph, split: DataSplit) -> np.ndarray:
    """Train interactions as (user entity, item entity) rows."""
    edges = split.train_edges
    return np.stack([graph.user_entity[edges[:, 0]], graph.item_entity[edges[:, 1]]], axis=1)


def make_cache(graph, store, config, epoch=0) -> AttentionCache:
    if uses_global(config.ablation):
        return build_attention_cache(graph, store, epoch)
    return uniform_attention_cache(graph, epoch)


def _check(loss, store, config, where, dump_dir):
    if np.isfinite(loss):
        return
    msg = f"non-finite loss in {where}"
    if dump_dir is not None:
        path = Path(dump_dir) / "nonfinite_dump.npz"
        save_snapshot(path, store, {"config_hash": config.hash(), "where": where})
        msg += f"; state dumped to {path}"
    raise TrainingError(msg)


def coupled_l2(config) -> float:
    return config.l2 if config.weight_decay == "coupled" else 0.0


def decoupled_l2(config) -> float:
    # d/dtheta of l2 * theta**2
    return 2 * config.l2 if config.weight_decay == "decoupled" else 0.0


def run_phase_kg(store, graph, config, epoch, dump_dir=None) -> float:
    rng = stream(config.seed, PHASE_KG, epoch)
    order = rng.permutation(len(graph.triples))
    losses, sizes = [], []
    for b, start in enumerate(range(0, len(order), config.kg_batch)):
        idx = order[start:start + config.kg_batch]
        h, r, t = graph.triples[idx].T
        neg = sample_corrupt_tails(graph, h, r, stream(config.seed, PHASE_KG, epoch, b))
        batch = np.stack([h, r, t, neg], axis=1)
        try:
            loss, grads = kg_loss_batch(store, batch, config.norm, coupled_l2(config))
        except FloatingPointError:
            loss = float("nan")
        _check(loss, store, config, f"phase I epoch {epoch} batch {b}", dump_dir)
        adam_step(store, grads, config.lr, decay=decoupled_l2(config))
        losses.append(loss)
        sizes.append(len(idx))
    return float(np.average(losses, weights=sizes)) if losses else 0.0


def run_phase_target(store, graph, cache, pairs, config, epoch, dump_dir=None) -> float:
    rng = stream(config.seed, PHASE_TARGET, epoch)
    order = rng.permutation(len(pairs))
    hops = sample_hops(config)
    losses, sizes = [], []
    for b, start in enumerate(range(0, len(order), config.target_batch)):
        pos = pairs[order[start:start + config.target_batch]]
        brng = stream(config.seed, PHASE_TARGET, epoch, b)
        neg_items = sample_negative_items(graph, pos[:, 0], brng)
        targets = np.concatenate([pos, np.stack([pos[:, 0], neg_items], axis=1)])
        batch = sample_subgraphs(targets, hops, config.neighbors, cache, brng)
        try:
            loss, data_loss, grads = target_loss_batch(store, graph, cache, batch, config, rng=brng, lam=coupled_l2(config))
        except FloatingPointError:
            loss = data_loss = float("nan")
        _check(loss, store, config, f"phase II epoch {epoch} batch {b}", dump_dir)
        adam_step(store, grads, config.lr, decay=decoupled_l2(config))
        losses.append(data_loss)
        sizes.append(len(pos))
    return float(np.average(losses, weights=sizes)) if losses else 0.0


def train(config: TrainConfig, graph: UnifiedGraph, split: DataSplit, dump_dir=None, callback=None) -> TrainResult:
    """Phase I (knowledge embedding, attention refresh) then Phase II (target loss) per epoch."""
    config.validate()
    store = init_params(config, graph.entity_count, graph.relation_count, stream(config.seed, PHASE_INIT))
    pairs = training_pairs(graph, split)
    trace = LossTrace()
    cache = make_cache(graph, store, config)
    for epoch in range(config.epochs):
        kg = run_phase_kg(store, graph, config, epoch, dump_dir)
        trace.add(epoch, "kg", kg)
        cache = make_cache(graph, store, config, epoch)
        tl = run_phase_target(store, graph, cache, pairs, config, epoch, dump_dir)
        trace.add(epoch, "target", tl)
        log.info("epoch %d kg=%.5f target=%.5f", epoch, kg, tl)
        if callback is not None:
            callback(epoch, store, cache, trace)
    return TrainResult(store, cache, trace, config)


def run_ablation(config: TrainConfig, graph: UnifiedGraph, split: DataSplit, inter=None, variants=None):
    """Train and evaluate each variant with the same seed and data."""
    from .evaluate import evaluate

    variants = variants or ("full", "no_lc", "no_gk", "no_both")
    reports = {}
    for variant in variants:
        cfg = config.replace(ablation=variant)
        result = train(cfg, graph, split)
        reports[variant] = evaluate(result.scorer(graph), split, graph, cfg, trace=result.trace, inter=inter)
    return reports
