"""Training configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

ABLATIONS = ("full", "no_lc", "no_gk", "no_both")
NORMS = ("l1_sq", "l2_sq")
# "coupled" adds 2*l2*theta to the gradient before Adam; "decoupled" shrinks
# touched parameters by lr*2*l2 outside the adaptive step.
DECAYS = ("decoupled", "coupled")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    embed_dim: int = 16
    tower: tuple[int, ...] = (16, 8, 8)
    out_dim: int = 8
    hops: int = 2
    neighbors: int = 20
    lr: float = 0.025
    epochs: int = 200
    l2: float = 1e-3
    weight_decay: str = "decoupled"
    dropout: float = 0.1
    kg_batch: int = 1024
    target_batch: int = 256
    norm: str = "l1_sq"
    seed: int = 0
    ablation: str = "full"
    kagcn_depth: int = 1
    eval_negatives: int = 100
    top_k: int = 10
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.tower = tuple(int(x) for x in self.tower)
        self.validate()

    def validate(self) -> None:
        for name in ("embed_dim", "out_dim", "hops", "kg_batch", "target_batch", "kagcn_depth", "top_k"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.neighbors < 0 or self.epochs < 0 or self.eval_negatives < 0:
            raise ConfigError("neighbors, epochs and eval_negatives must be non-negative")
        if self.lr <= 0 or self.l2 < 0 or not 0 <= self.dropout < 1:
            raise ConfigError("need lr > 0, l2 >= 0, 0 <= dropout < 1")
        if any(d <= 0 for d in self.tower):
            raise ConfigError("tower dims must be positive")
        if len(self.tower) != self.hops + 1:
            raise ConfigError(f"tower needs hops + 1 = {self.hops + 1} dims, got {len(self.tower)}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")
        if self.weight_decay not in DECAYS:
            raise ConfigError(f"weight_decay must be one of {DECAYS}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.ablation in ("no_gk", "no_both") and self.tower[0] != self.embed_dim:
            raise ConfigError("no_gk/no_both feed raw embeddings forward: tower[0] must equal embed_dim")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("extra")
        d["tower"] = list(self.tower)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_text(self) -> str:
        lines = []
        for k, v in self.as_dict().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "extra"}


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    base = base or TrainConfig()
    return base.replace(**values)


def _coerce(key, value):
    default = getattr(TrainConfig(), key)
    try:
        if isinstance(default, tuple):
            return tuple(int(x) for x in value.replace(" ", "").strip("()").split(",") if x)
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
