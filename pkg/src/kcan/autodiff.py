"""A small reverse-mode tape over numpy arrays.

Only the operations the model needs are provided.  Values are computed
eagerly; :meth:`Tape.backward` walks the recorded graph once and returns a
:class:`~kcan.params.GradientSet` keyed by parameter name.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .params import GradientSet, ParameterStore


class Var:
    __slots__ = ("value", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def _v(x):
    return x.value if isinstance(x, Var) else x


def _wrap(x):
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tape:
    """Collects parameter leaves for one forward pass."""

    def __init__(self, store: ParameterStore):
        self.store = store
        self._dense: dict[str, Var] = {}
        self._rows: list[tuple[str, np.ndarray, Var]] = []

    def param(self, name: str) -> Var:
        if name not in self._dense:
            self._dense[name] = Var(self.store.params[name])
        return self._dense[name]

    def rows(self, name: str, idx) -> Var:
        idx = np.asarray(idx, dtype=np.int64)
        var = Var(self.store.params[name][idx])
        self._rows.append((name, idx, var))
        return var

    def backward(self, out: Var) -> GradientSet:
        if out.value.size != 1:
            raise ValueError("backward needs a scalar output")
        order = _topo(out)
        grads = {id(out): np.ones_like(out.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None) if node.backward_fn is not None else grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not isinstance(parent, Var):
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        result = GradientSet()
        for name, var in self._dense.items():
            g = grads.get(id(var))
            result.add_dense(name, g if g is not None else np.zeros_like(var.value))
        for name, idx, var in self._rows:
            g = grads.get(id(var))
            if g is None:
                g = np.zeros_like(var.value)
            result.add_sparse(name, idx.ravel(), g.reshape(idx.size, -1))
        return result


def _topo(out: Var):
    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    return order


def add(a, b) -> Var:
    av, bv = _v(a), _v(b)
    return Var(av + bv, (a, b), lambda g: (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv))))


def sub(a, b) -> Var:
    av, bv = _v(a), _v(b)
    return Var(av - bv, (a, b), lambda g: (_unbroadcast(g, np.shape(av)), -_unbroadcast(g, np.shape(bv))))


def mul(a, b) -> Var:
    av, bv = _v(a), _v(b)
    return Var(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, np.shape(av)), _unbroadcast(g * av, np.shape(bv))),
    )


def scale(a, c: float) -> Var:
    return Var(_v(a) * c, (a,), lambda g: (g * c,))


def linear(x, w, b=None) -> Var:
    """``x @ w.T + b`` with ``w`` shaped (out, in)."""
    xv, wv = _v(x), _v(w)
    out = xv @ wv.T
    if b is not None:
        out = out + _v(b)

    def back(g):
        return (g @ wv, g.T @ xv, None if b is None else g.sum(axis=0))

    return Var(out, (x, w, b) if b is not None else (x, w), back)


def matvec(x, a) -> Var:
    xv, av = _v(x), _v(a)
    return Var(xv @ av, (x, a), lambda g: (np.outer(g, av), xv.T @ g))


def leaky_relu(x, slope=0.2) -> Var:
    xv = _v(x)
    d = np.where(xv > 0, 1.0, slope)
    return Var(xv * d, (x,), lambda g: (g * d,))


def concat(parts, axis=-1) -> Var:
    vals = [_v(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Var(np.concatenate(vals, axis=axis), tuple(parts), back)


def take(x, idx) -> Var:
    """Rows ``x[idx]``; the backward pass scatter-adds."""
    xv = _v(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = xv.shape[0]
    return Var(xv[idx], (x,), lambda g: (kernels.scatter_add_rows(n, idx, g).reshape(xv.shape),))


def rowdot(a, b) -> Var:
    av, bv = _v(a), _v(b)
    return Var(np.einsum("ij,ij->i", av, bv), (a, b), lambda g: (g[:, None] * bv, g[:, None] * av))


def segment_softmax(z, indptr) -> Var:
    p = kernels.segment_softmax(_v(z), indptr)
    return Var(p, (z,), lambda g: (kernels.segment_softmax_backward(p, g, indptr),))


def spmm(indptr, cols, w, x) -> Var:
    """Weighted segment sum ``out[s] = sum_e w[e] * x[cols[e]]``."""
    wv, xv = _v(w), _v(x)
    out = kernels.spmm(indptr, cols, wv, xv)

    def back(g):
        gw, gx = kernels.spmm_backward(indptr, cols, wv, xv, g)
        return gw, gx

    return Var(out, (w, x), back)


def softplus(x) -> Var:
    xv = _v(x)
    out = np.logaddexp(0.0, xv)
    sig = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return Var(out, (x,), lambda g: (g * sig,))


def mean(x) -> Var:
    xv = _v(x)
    n = xv.size
    return Var(np.asarray(xv.mean()), (x,), lambda g: (np.full_like(xv, g / n),))


def total(x) -> Var:
    xv = _v(x)
    return Var(np.asarray(xv.sum()), (x,), lambda g: (np.full_like(xv, g),))


def sum_rows(x) -> Var:
    xv = _v(x)
    return Var(xv.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], xv.shape[1], axis=1),))


def absolute(x) -> Var:
    xv = _v(x)
    return Var(np.abs(xv), (x,), lambda g: (g * np.sign(xv),))


def square(x) -> Var:
    xv = _v(x)
    return Var(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def dropout(x, rate: float, rng) -> Var:
    """Inverted dropout; a no-op when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0:
        return x
    xv = _v(x)
    mask = (rng.random(xv.shape) >= rate) / (1.0 - rate)
    return Var(xv * mask, (x,), lambda g: (g * mask,))


def part(x, start: int, stop: int) -> Var:
    """Slice ``x[start:stop]`` along the first axis."""
    xv = _v(x)

    def back(g):
        full = np.zeros_like(xv)
        full[start:stop] = g
        return (full,)

    return Var(xv[start:stop], (x,), back)
