"""TransH projection, triple distance and the knowledge-graph BPR loss."""

from __future__ import annotations

import numpy as np

from .params import GradientSet, ParameterStore, touched_penalty


def project(e, w):
    """Remove the component of ``e`` along the unit normal ``w`` (row-wise)."""
    e = np.asarray(e, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return e - np.sum(e * w, axis=-1, keepdims=True) * w


def _distance(x, norm):
    if norm == "l1_sq":
        s = np.abs(x).sum(axis=-1)
        return s * s
    if norm == "l2_sq":
        return (x * x).sum(axis=-1)
    raise ValueError(f"unknown norm {norm!r}")


def _distance_grad(x, norm):
    if norm == "l1_sq":
        return 2.0 * np.abs(x).sum(axis=-1, keepdims=True) * np.sign(x)
    return 2.0 * x


def translation_residual(store: ParameterStore, h, r, t):
    e_h = store.params["entity"][h]
    e_t = store.params["entity"][t]
    w = store.params["rel_w"][r]
    d = store.params["rel_d"][r]
    return project(e_h, w) + d - project(e_t, w)


def score(h, r, t, store: ParameterStore, norm="l1_sq"):
    """Distance f_r(h, t); lower means more plausible.  Accepts arrays."""
    return _distance(translation_residual(store, h, r, t), norm)


def _score_and_grads(store, h, r, t, norm):
    e_h = store.params["entity"][h]
    e_t = store.params["entity"][t]
    w = store.params["rel_w"][r]
    d = store.params["rel_d"][r]
    delta = e_h - e_t
    s = np.sum(w * delta, axis=1, keepdims=True)
    x = delta - s * w + d
    f = _distance(x, norm)
    g = _distance_grad(x, norm)
    gw_dot = np.sum(g * w, axis=1, keepdims=True)
    g_proj = g - gw_dot * w  # P g, P = I - w w^T
    grad_w = -gw_dot * delta - s * g
    return f, g_proj, g, grad_w


def kg_loss_batch(store: ParameterStore, batch, norm="l1_sq", lam=0.0):
    """Mean of -ln sigmoid(f(h, t') - f(h, t)) over ``batch`` rows (h, r, t, t').

    Returns ``(loss, grads)``; with ``lam > 0`` the L2 penalty on the touched
    rows is included in both.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    h, r, t, tn = batch.T
    n = len(batch)
    f_pos, gp_pos, gd_pos, gw_pos = _score_and_grads(store, h, r, t, norm)
    f_neg, gp_neg, gd_neg, gw_neg = _score_and_grads(store, h, r, tn, norm)
    margin = f_neg - f_pos
    loss = float(np.mean(np.logaddexp(0.0, -margin)))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite knowledge-graph loss")
    # d loss / d f_pos = sigmoid(-margin) / n, d loss / d f_neg = -that
    c = (0.5 * (1.0 + np.tanh(-0.5 * margin)) / n)[:, None]
    grads = GradientSet()
    grads.add_sparse(
        "entity",
        np.concatenate([h, t, h, tn]),
        np.concatenate([c * gp_pos, -c * gp_pos, -c * gp_neg, c * gp_neg]),
    )
    grads.add_sparse("rel_d", np.concatenate([r, r]), np.concatenate([c * gd_pos, -c * gd_neg]))
    grads.add_sparse("rel_w", np.concatenate([r, r]), np.concatenate([c * gw_pos, -c * gw_neg]))
    if lam > 0:
        pen, pen_grads = touched_penalty(store, lam, grads)
        loss += pen
        grads = grads.merge(pen_grads)
    return loss, grads
