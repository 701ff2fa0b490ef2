"""Leave-one-out top-K ranking metrics and CTR AUC."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .graph import DataSplit, UnifiedGraph


def rank_of(test_score: float, negative_scores) -> int:
    """1 + number of negatives scoring >= the test item (ties count against it)."""
    return 1 + int(np.count_nonzero(np.asarray(negative_scores) >= test_score))


def hit_at_k(rank: int, k: int = 10) -> int:
    if rank < 1:
        raise ValueError("rank starts at 1")
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int = 10) -> float:
    if rank < 1:
        raise ValueError("rank starts at 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC with ties credited one half."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs positive and negative scores")
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    wins = below.sum() + 0.5 * (not_above - below).sum()
    return float(wins / (pos.size * neg.size))


def rank_test_item(scorer, user: int, true_item: int, negatives, rng) -> int:
    """Rank of ``true_item`` among ``negatives`` for ``user`` (entity ids)."""
    negatives = np.asarray(negatives, dtype=np.int64)
    items = np.concatenate([[true_item], negatives])
    scores = scorer(np.full(len(items), user), items, rng)
    return rank_of(scores[0], scores[1:])


@dataclass
class EvalReport:
    hit: float
    ndcg: float
    auc: float
    k: int
    users: int
    negative_shortfall: int
    seed: int
    config_hash: str
    ablation: str = "full"
    epoch_losses: list = field(default_factory=list)

    def metrics(self) -> dict:
        return {f"hit@{self.k}": self.hit, f"ndcg@{self.k}": self.ndcg, "auc": self.auc}

    def to_json(self) -> str:
        return json.dumps(
            {
                "metrics": self.metrics(),
                "users": self.users,
                "negative_shortfall": self.negative_shortfall,
                "seed": self.seed,
                "config_hash": self.config_hash,
                "ablation": self.ablation,
                "epoch_losses": self.epoch_losses,
            },
            sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [f"{name}\t{value:.6f}\tseed={self.seed}\tconfig={self.config_hash}" for name, value in self.metrics().items()]
        return "\n".join(lines) + "\n"


def _interacted_items(split: DataSplit):
    edges = np.concatenate([split.train_edges, split.test_edges])
    per_user: dict[int, set] = {}
    for u, i in edges:
        per_user.setdefault(int(u), set()).add(int(i))
    return per_user


def evaluate(scorer, split: DataSplit, graph: UnifiedGraph, config: TrainConfig, trace=None, inter=None, rng=None) -> EvalReport:
    """Hit@K / NDCG@K over held-out items against sampled negatives, plus AUC.

    AUC pools every held-out positive with one sampled non-interacted item of
    the same user.  ``scorer(user_entities, item_entities, rng)`` returns scores.
    """
    from .trainer import PHASE_EVAL, stream

    rng = rng if rng is not None else stream(config.seed, PHASE_EVAL)
    n_items = len(graph.item_entity)
    seen = _interacted_items(split)
    users, items, owners = [], [], []
    auc_users, auc_items = [], []
    shortfall = 0
    test = split.test_edges
    for row, (u, i) in enumerate(test):
        mask = np.ones(n_items, dtype=bool)
        mask[list(seen.get(int(u), ()))] = False
        eligible = np.flatnonzero(mask)
        n_neg = min(config.eval_negatives, len(eligible))
        shortfall += config.eval_negatives - n_neg
        negs = rng.choice(eligible, size=n_neg, replace=False) if n_neg else np.zeros(0, dtype=np.int64)
        cand = np.concatenate([[i], negs])
        users.append(np.full(len(cand), u))
        items.append(cand)
        owners.append(np.full(len(cand), row))
        if len(eligible):
            auc_users.append(u)
            auc_items.append(rng.choice(eligible))
    if not len(test):
        raise ValueError("split has no test interactions")
    users = np.concatenate(users)
    items = np.concatenate(items)
    owners = np.concatenate(owners)
    all_users = np.concatenate([users, np.asarray(auc_users, dtype=np.int64)])
    all_items = np.concatenate([items, np.asarray(auc_items, dtype=np.int64)])
    scores = scorer(graph.user_entity[all_users], graph.item_entity[all_items], rng)
    rank_scores, auc_neg = scores[: len(users)], scores[len(users):]
    bounds = np.searchsorted(owners, np.arange(len(test) + 1))
    hits, ndcgs, pos_scores = [], [], []
    for row in range(len(test)):
        s = rank_scores[bounds[row]:bounds[row + 1]]
        r = rank_of(s[0], s[1:])
        hits.append(hit_at_k(r, config.top_k))
        ndcgs.append(ndcg_at_k(r, config.top_k))
        pos_scores.append(s[0])
    auc_value = auc(pos_scores, auc_neg) if len(auc_neg) else float("nan")
    losses = [] if trace is None else [[e, p, l] for e, p, l in trace.rows]
    return EvalReport(
        hit=float(np.mean(hits)),
        ndcg=float(np.mean(ndcgs)),
        auc=auc_value,
        k=config.top_k,
        users=len(test),
        negative_shortfall=int(shortfall),
        seed=config.seed,
        config_hash=config.hash(),
        ablation=config.ablation,
        epoch_losses=losses,
    )
