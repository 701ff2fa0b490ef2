"""Trainable parameters, Adam updates, L2 regularization and gradient checking."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPARSE_TABLES = ("entity", "rel_d", "rel_w")
SNAPSHOT_VERSION = 1


@dataclass
class GradientSet:
    """Gradients keyed by parameter name.

    Dense tensors map to full arrays; embedding tables map to
    ``(rows, values)`` with unique sorted rows.  Absent names/rows were not
    touched.
    """

    dense: dict = field(default_factory=dict)
    sparse: dict = field(default_factory=dict)

    def add_dense(self, name, g):
        g = np.asarray(g, dtype=np.float64)
        if name in self.dense:
            self.dense[name] = self.dense[name] + g
        else:
            self.dense[name] = g.copy()

    def add_sparse(self, name, rows, values):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).reshape(len(rows), -1)
        if name in self.sparse:
            old_rows, old_vals = self.sparse[name]
            rows = np.concatenate([old_rows, rows])
            values = np.concatenate([old_vals, values])
        uniq, inv = np.unique(rows, return_inverse=True)
        summed = np.zeros((len(uniq), values.shape[1]))
        np.add.at(summed, inv, values)
        self.sparse[name] = (uniq, summed)

    def merge(self, other: "GradientSet") -> "GradientSet":
        out = GradientSet({k: v.copy() for k, v in self.dense.items()}, dict(self.sparse))
        for k, v in other.dense.items():
            out.add_dense(k, v)
        for k, (rows, vals) in other.sparse.items():
            out.add_sparse(k, rows, vals)
        return out

    def scale(self, factor: float) -> "GradientSet":
        return GradientSet(
            {k: v * factor for k, v in self.dense.items()},
            {k: (r, v * factor) for k, (r, v) in self.sparse.items()},
        )

    def names(self):
        return list(self.dense) + list(self.sparse)

    def to_dense(self, store: "ParameterStore") -> dict:
        out = {k: v.copy() for k, v in self.dense.items()}
        for k, (rows, vals) in self.sparse.items():
            full = np.zeros_like(store.params[k])
            full[rows] = vals
            out[k] = full
        return out

    def entry(self, name, index) -> float:
        """Gradient of one scalar parameter (0 when untouched)."""
        if name in self.dense:
            return float(self.dense[name][index])
        if name in self.sparse:
            rows, vals = self.sparse[name]
            pos = np.searchsorted(rows, index[0])
            if pos < len(rows) and rows[pos] == index[0]:
                return float(vals[(pos,) + tuple(index[1:])])
        return 0.0


class ParameterStore:
    """Named parameter tensors plus Adam state.

    Embedding tables (``SPARSE_TABLES``) keep a per-row update count so bias
    correction stays exact under row-sparse updates; dense tensors keep one
    count each.
    """

    def __init__(self, params: dict, step: int = 0):
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.counts = {
            k: np.zeros(v.shape[0] if k in SPARSE_TABLES else 1, dtype=np.int64) for k, v in self.params.items()
        }
        self.step = step

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def copy(self) -> "ParameterStore":
        new = ParameterStore.__new__(ParameterStore)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.m = {k: v.copy() for k, v in self.m.items()}
        new.v = {k: v.copy() for k, v in self.v.items()}
        new.counts = {k: v.copy() for k, v in self.counts.items()}
        new.step = self.step
        return new

    def equals(self, other: "ParameterStore") -> bool:
        if self.step != other.step or set(self.params) != set(other.params):
            return False
        for attr in ("params", "m", "v", "counts"):
            a, b = getattr(self, attr), getattr(other, attr)
            if any(not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True


def xavier_uniform(rng, shape, fan_in=None, fan_out=None):
    if fan_in is None:
        fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def layer_shapes(config, entity_count: int, relation_count: int) -> dict:
    f0 = config.embed_dim
    tower = config.tower
    shapes = {
        "entity": (entity_count, f0),
        "rel_d": (relation_count, f0),
        "rel_w": (relation_count, f0),
    }
    in_dim = f0
    for d in range(config.kagcn_depth):
        suffix = "" if d == 0 else f"_{d + 1}"
        shapes[f"W1{suffix}"] = (tower[0], 2 * in_dim)
        shapes[f"b1{suffix}"] = (tower[0],)
        in_dim = tower[0]
    for j in range(1, config.hops + 1):
        f_in, f_out = tower[j - 1], tower[j]
        shapes[f"Wt{j}"] = (f_out, 2 * tower[0])
        shapes[f"We{j}"] = (f_out, f_in)
        shapes[f"a{j}"] = (2 * f_out,)
        shapes[f"W{j + 1}"] = (f_out, 2 * f_in)
        shapes[f"b{j + 1}"] = (f_out,)
    shapes["Wo"] = (config.out_dim, tower[0] + tower[-1])
    shapes["bo"] = (config.out_dim,)
    return shapes


def init_params(config, entity_count: int, relation_count: int, rng) -> ParameterStore:
    """Xavier-uniform weights and tables, zero biases, unit hyperplane normals.

    Lookup tables are initialised row-wise (fan_in = fan_out = row width).
    Using the full table shape shrinks rows as the graph grows, which leaves
    the inner-product score stuck near its zero saddle while weight decay
    pulls the output head to zero.
    """
    if entity_count <= 0 or relation_count <= 0:
        raise ValueError("entity_count and relation_count must be positive")
    config.validate()
    params = {}
    for name, shape in layer_shapes(config, entity_count, relation_count).items():
        if any(s <= 0 for s in shape):
            raise ValueError(f"non-positive dimension for {name}: {shape}")
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        elif name in SPARSE_TABLES:
            params[name] = xavier_uniform(rng, shape, shape[1], shape[1])
        else:
            params[name] = xavier_uniform(rng, shape)
    w = params["rel_w"]
    params["rel_w"] = w / np.maximum(np.linalg.norm(w, axis=1, keepdims=True), 1e-12)
    return ParameterStore(params)


def renormalize_rows(x, rows=None):
    sel = slice(None) if rows is None else rows
    norms = np.linalg.norm(x[sel], axis=1, keepdims=True)
    x[sel] = x[sel] / np.maximum(norms, 1e-12)


def adam_step(store: ParameterStore, grads: GradientSet, lr=0.025, beta1=0.9, beta2=0.999, eps=1e-8, decay=0.0):
    """Bias-corrected Adam on the touched tensors/rows, in place.

    A tensor whose gradient is identically zero only decays its moments.
    ``decay`` > 0 also shrinks every updated entry by ``lr * decay`` (weight
    decay kept outside the adaptive scaling).  Hyperplane normals are
    renormalized to unit length afterwards.
    """
    shrink = 1.0 - lr * decay
    store.step += 1
    for name, g in grads.dense.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        store.m[name] *= beta1
        store.v[name] *= beta2
        if not np.any(g):
            continue
        store.m[name] += (1 - beta1) * g
        store.v[name] += (1 - beta2) * g * g
        store.counts[name] += 1
        t = store.counts[name][0]
        m_hat = store.m[name] / (1 - beta1**t)
        v_hat = store.v[name] / (1 - beta2**t)
        if decay:
            p *= shrink
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    for name, (rows, g) in grads.sparse.items():
        p = store.params[name]
        if g.shape[1:] != p.shape[1:] or (len(rows) and (rows.min() < 0 or rows.max() >= p.shape[0])):
            raise ValueError(f"sparse gradient for {name} does not fit parameter shape {p.shape}")
        m = store.m[name][rows] * beta1 + (1 - beta1) * g
        v = store.v[name][rows] * beta2 + (1 - beta2) * g * g
        store.m[name][rows] = m
        store.v[name][rows] = v
        moving = np.any(g != 0, axis=1)
        rows_m = rows[moving]
        store.counts[name][rows_m] += 1
        t = store.counts[name][rows_m][:, None]
        m_hat = m[moving] / (1 - beta1**t)
        v_hat = v[moving] / (1 - beta2**t)
        if decay:
            p[rows_m] *= shrink
        p[rows_m] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if name == "rel_w":
            renormalize_rows(p, rows_m)
    return store


def l2_penalty(store: ParameterStore, lam: float, touched: GradientSet | None = None):
    """``lam * sum(theta**2)`` over every tensor, and its gradient ``2 lam theta``.

    With ``touched`` the gradient covers only the tensors/rows it contains.
    """
    value = lam * sum(float(np.sum(p * p)) for p in store.params.values())
    grad = GradientSet()
    if touched is None:
        for name, p in store.params.items():
            grad.add_dense(name, 2 * lam * p) if name not in SPARSE_TABLES else grad.add_sparse(
                name, np.arange(p.shape[0]), 2 * lam * p
            )
        return value, grad
    for name in touched.dense:
        grad.add_dense(name, 2 * lam * store.params[name])
    for name, (rows, _) in touched.sparse.items():
        grad.add_sparse(name, rows, 2 * lam * store.params[name][rows])
    return value, grad


def touched_penalty(store: ParameterStore, lam: float, touched: GradientSet):
    """Penalty restricted to what ``touched`` covers; value and gradient agree."""
    value = 0.0
    grad = GradientSet()
    for name in touched.dense:
        p = store.params[name]
        value += float(np.sum(p * p))
        grad.add_dense(name, 2 * lam * p)
    for name, (rows, _) in touched.sparse.items():
        p = store.params[name][rows]
        value += float(np.sum(p * p))
        grad.add_sparse(name, rows, 2 * lam * p)
    return lam * value, grad


class GradCheckError(RuntimeError):
    pass


def grad_check(loss_evaluator, store: ParameterStore, probe_count=20, h=1e-4, rng=None, return_details=False):
    """Max relative error between analytic and central-difference gradients.

    ``loss_evaluator(store) -> (loss, GradientSet)`` must be deterministic.
    Probes are drawn among the scalar parameters the analytic gradient touches.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    loss, grads = loss_evaluator(store)
    if not np.isfinite(loss):
        raise GradCheckError("non-finite loss")
    candidates = []
    for name, g in grads.dense.items():
        candidates.append((name, None, g.size))
    for name, (rows, vals) in grads.sparse.items():
        candidates.append((name, rows, vals.size))
    sizes = np.array([c[2] for c in candidates], dtype=np.float64)
    if sizes.sum() == 0:
        raise GradCheckError("loss touches no parameters")
    details = []
    worst = 0.0
    for _ in range(probe_count):
        name, rows, _ = candidates[rng.choice(len(candidates), p=sizes / sizes.sum())]
        p = store.params[name]
        if rows is None:
            index = np.unravel_index(rng.integers(p.size), p.shape)
        else:
            index = (int(rows[rng.integers(len(rows))]), int(rng.integers(p.shape[1])))
        analytic = grads.entry(name, index)
        orig = p[index]
        p[index] = orig + h
        plus, _ = loss_evaluator(store)
        p[index] = orig - h
        minus, _ = loss_evaluator(store)
        p[index] = orig
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise GradCheckError("non-finite loss under perturbation")
        numeric = (plus - minus) / (2 * h)
        err = abs(analytic - numeric) / max(abs(numeric), 1e-8)
        details.append((name, tuple(int(i) for i in index), analytic, numeric, err))
        worst = max(worst, err)
    return (worst, details) if return_details else worst


def save_snapshot(path, store: ParameterStore, meta: dict | None = None, extra: dict | None = None) -> None:
    """Write parameters, Adam state, metadata and ``extra`` arrays to one ``.npz``."""
    meta = dict(meta or {})
    meta.update(
        version=SNAPSHOT_VERSION,
        step=store.step,
        shapes={k: list(v.shape) for k, v in store.params.items()},
    )
    arrays = {}
    for k in store.params:
        arrays[f"param/{k}"] = store.params[k]
        arrays[f"m/{k}"] = store.m[k]
        arrays[f"v/{k}"] = store.v[k]
        arrays[f"count/{k}"] = store.counts[k]
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_snapshot(path):
    """Inverse of :func:`save_snapshot`: returns ``(store, meta, extra)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {meta.get('version')}")
        names = list(meta["shapes"])
        store = ParameterStore({k: data[f"param/{k}"] for k in names}, step=meta["step"])
        for k in names:
            store.m[k] = data[f"m/{k}"].copy()
            store.v[k] = data[f"v/{k}"].copy()
            store.counts[k] = data[f"count/{k}"].copy()
            if list(store.params[k].shape) != meta["shapes"][k]:
                raise ValueError(f"shape mismatch for {k}")
        extra = {k[len("extra/"):]: data[k].copy() for k in data.files if k.startswith("extra/")}
    return store, meta, extra
