"""Planted-preference dataset generator.

Each item carries one attribute; each user prefers one attribute and
interacts with every preferred item with probability ``pref_prob`` and with
every other item with probability ``noise``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SynthConfig:
    users: int = 200
    items: int = 100
    attributes: int = 2
    pref_prob: float = 0.9
    noise: float = 0.1
    seed: int = 0

    def validate(self):
        if self.users <= 0 or self.items <= 0 or self.attributes <= 0:
            raise ValueError("users, items and attributes must be positive")
        if self.attributes > self.items:
            raise ValueError("need at least one item per attribute")
        if not (0 <= self.noise <= 1 and 0 < self.pref_prob <= 1):
            raise ValueError("probabilities must lie in [0, 1] and pref_prob > 0")


@dataclass
class SynthData:
    item_attribute: np.ndarray
    user_preference: np.ndarray
    interactions: np.ndarray  # (n, 2) user, item


def generate(cfg: SynthConfig) -> SynthData:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    item_attribute = rng.permutation(np.arange(cfg.items) % cfg.attributes)
    user_preference = rng.integers(cfg.attributes, size=cfg.users)
    preferred = user_preference[:, None] == item_attribute[None, :]
    prob = np.where(preferred, cfg.pref_prob, cfg.noise)
    clicks = rng.random((cfg.users, cfg.items)) < prob
    for u in np.flatnonzero(clicks.sum(axis=1) == 0):
        # every user needs at least one interaction; give them a preferred item
        clicks[u, rng.choice(np.flatnonzero(preferred[u]))] = True
    users, items = np.nonzero(clicks)
    return SynthData(item_attribute, user_preference, np.stack([users, items], axis=1))


def write_dataset(data: SynthData, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "interactions.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for u, i in data.interactions:
            fh.write(f"u{u}\ti{i}\n")
    with (out / "triples.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for i, a in enumerate(data.item_attribute):
            fh.write(f"item{i}\thas_attribute\tattr{a}\n")
    with (out / "alignment.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(data.item_attribute)):
            fh.write(f"i{i}\titem{i}\n")
    return out


def bayes_auc(cfg: SynthConfig) -> float:
    """AUC of the scorer 'item has the user's preferred attribute'.

    A held-out positive is preferred with probability proportional to
    ``pref_prob``; a non-interacted negative with probability proportional to
    ``1 - pref_prob``.  Ties (both or neither preferred) earn one half.
    """
    n_pref = cfg.items / cfg.attributes
    n_other = cfg.items - n_pref
    p, q = cfg.pref_prob, cfg.noise
    pos_pref = n_pref * p / (n_pref * p + n_other * q)
    denom = n_pref * (1 - p) + n_other * (1 - q)
    neg_pref = n_pref * (1 - p) / denom if denom > 0 else 0.0
    return pos_pref * (1 - neg_pref) + 0.5 * (pos_pref * neg_pref + (1 - pos_pref) * (1 - neg_pref))
