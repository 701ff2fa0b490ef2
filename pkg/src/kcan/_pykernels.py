"""Pure numpy/scipy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Segments are described CSR-style: entries of segment ``s`` occupy
``indptr[s]:indptr[s + 1]``.
"""

import numpy as np
import scipy.sparse as sp


def _segment_ids(indptr):
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def _nonempty_starts(indptr):
    counts = np.diff(indptr)
    return indptr[:-1][counts > 0], counts > 0


def segment_softmax(logits, indptr):
    logits = np.asarray(logits, dtype=np.float64)
    indptr = np.asarray(indptr, dtype=np.int64)
    out = np.empty_like(logits)
    if logits.size == 0:
        return out
    starts, mask = _nonempty_starts(indptr)
    seg = _segment_ids(indptr)
    seg_max = np.zeros(len(indptr) - 1)
    seg_max[mask] = np.maximum.reduceat(logits, starts)
    ex = np.exp(logits - seg_max[seg])
    seg_sum = np.ones(len(indptr) - 1)
    seg_sum[mask] = np.add.reduceat(ex, starts)
    np.divide(ex, seg_sum[seg], out=out)
    return out


def segment_softmax_backward(probs, grad_out, indptr):
    probs = np.asarray(probs, dtype=np.float64)
    indptr = np.asarray(indptr, dtype=np.int64)
    if probs.size == 0:
        return np.empty_like(probs)
    starts, mask = _nonempty_starts(indptr)
    seg = _segment_ids(indptr)
    pg = probs * grad_out
    dots = np.zeros(len(indptr) - 1)
    dots[mask] = np.add.reduceat(pg, starts)
    return pg - probs * dots[seg]


def _check_range(idx, upper, what):
    if len(idx) and (idx.min() < 0 or idx.max() >= upper):
        raise IndexError(f"{what} index out of range [0, {upper})")


def _csr(indptr, cols, weights, n_cols):
    _check_range(np.asarray(cols), n_cols, "column")
    return sp.csr_matrix(
        (np.asarray(weights, dtype=np.float64), np.asarray(cols), np.asarray(indptr)),
        shape=(len(indptr) - 1, n_cols),
    )


def spmm(indptr, cols, weights, x):
    """out[s] = sum over entries e of segment s of weights[e] * x[cols[e]]."""
    x = np.asarray(x, dtype=np.float64)
    if len(cols) == 0:
        return np.zeros((len(indptr) - 1, x.shape[1]))
    return np.asarray(_csr(indptr, cols, weights, x.shape[0]) @ x)


def spmm_backward(indptr, cols, weights, x, grad_out):
    """Gradients of ``spmm`` w.r.t. weights and x."""
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if len(cols) == 0:
        return np.zeros(0), np.zeros_like(x)
    seg = _segment_ids(indptr)
    gw = np.einsum("ij,ij->i", grad_out[seg], x[cols])
    gx = np.asarray(_csr(indptr, cols, weights, x.shape[0]).T @ grad_out)
    return gw, gx


def scatter_add_rows(n_rows, idx, values):
    """Sum rows of ``values`` into an ``n_rows``-row array at positions ``idx``."""
    values = np.asarray(values, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    _check_range(idx, n_rows, "row")
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=n_rows).astype(np.float64)
    if idx.size == 0:
        return np.zeros((n_rows,) + values.shape[1:])
    scatter = sp.csr_matrix(
        (np.ones(idx.size), (idx, np.arange(idx.size))), shape=(n_rows, idx.size)
    )
    return np.asarray(scatter @ values)


def sample_rows(indptr, cdf, nodes, uniforms):
    """Inverse-CDF draws from CSR rows.

    ``cdf`` holds the within-row cumulative probabilities (last entry of each
    non-empty row equal to 1).  Returns global entry indices shaped like
    ``uniforms``; rows without entries yield -1.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    nodes = np.asarray(nodes, dtype=np.int64)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    out = np.full(uniforms.shape, -1, dtype=np.int64)
    if uniforms.size == 0 or len(cdf) == 0:
        return out
    row_of_entry = _segment_ids(indptr).astype(np.float64)
    keys = row_of_entry + np.asarray(cdf, dtype=np.float64)
    x = nodes[:, None].astype(np.float64) + uniforms
    picked = np.searchsorted(keys, x, side="right")
    end = indptr[nodes + 1][:, None]
    start = indptr[nodes][:, None]
    picked = np.minimum(picked, end - 1)
    valid = np.broadcast_to(end > start, picked.shape)
    out[valid] = picked[valid]
    return out


def bfs_sample(indptr, cdf, tails, targets_flat, n_ent, hops, m, rng):
    """Joint breadth-first sampling from target pairs.

    ``targets_flat`` lists (user, item) entity ids pairwise; pair ``b`` seeds
    subgraph ``b`` with local nodes ``2b`` and ``2b + 1``.  Each newly reached
    node draws ``m`` out-edges via ``sample_rows`` with uniforms from
    ``rng.random((frontier, m))``; duplicate draws collapse.  New nodes are
    numbered in (subgraph, entity) order, edges are ordered by (head, edge id).

    Returns ``(node_entity, node_sub, node_hop), (edge_head, edge_tail,
    edge_id, edge_hop)``.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    tails = np.asarray(tails, dtype=np.int64)
    targets_flat = np.asarray(targets_flat, dtype=np.int64)
    n_edges = len(tails)
    n0 = len(targets_flat)
    ent = targets_flat.copy()
    sub = np.arange(n0, dtype=np.int64) // 2
    hop_of = np.zeros(n0, dtype=np.int64)
    keys = sub * n_ent + ent
    order = np.argsort(keys, kind="stable")
    visited_keys, visited_local = keys[order], order.astype(np.int64)
    frontier = np.arange(n0, dtype=np.int64)
    n_local = n0
    parts = {"ent": [ent], "sub": [sub], "hop": [hop_of], "eh": [], "et": [], "ei": [], "ehop": []}
    for hop in range(1, hops + 1):
        if len(frontier) == 0 or m <= 0 or n_edges == 0:
            break
        fr_sub = sub[frontier] if hop == 1 else parts["sub"][-1]
        fr_ent = ent[frontier] if hop == 1 else parts["ent"][-1]
        draws = sample_rows(indptr, cdf, fr_ent, rng.random((len(frontier), m)))
        heads = np.repeat(frontier, m)
        head_sub = np.repeat(fr_sub, m)
        eids = draws.ravel()
        keep = eids >= 0
        pair_keys, first = np.unique(heads[keep] * n_edges + eids[keep], return_index=True)
        heads = pair_keys // n_edges
        eids = pair_keys % n_edges
        tail_keys = head_sub[keep][first] * n_ent + tails[eids]
        pos = np.minimum(np.searchsorted(visited_keys, tail_keys), len(visited_keys) - 1)
        known = visited_keys[pos] == tail_keys
        tail_local = np.empty(len(tail_keys), dtype=np.int64)
        tail_local[known] = visited_local[pos[known]]
        new_keys, inv = np.unique(tail_keys[~known], return_inverse=True)
        new_local = n_local + np.arange(len(new_keys), dtype=np.int64)
        tail_local[~known] = new_local[inv]
        n_local += len(new_keys)
        parts["ent"].append(new_keys % n_ent)
        parts["sub"].append(new_keys // n_ent)
        parts["hop"].append(np.full(len(new_keys), hop, dtype=np.int64))
        merged_keys = np.concatenate([visited_keys, new_keys])
        merged_local = np.concatenate([visited_local, new_local])
        order = np.argsort(merged_keys, kind="stable")
        visited_keys, visited_local = merged_keys[order], merged_local[order]
        parts["eh"].append(heads)
        parts["et"].append(tail_local)
        parts["ei"].append(eids)
        parts["ehop"].append(np.full(len(heads), hop, dtype=np.int64))
        frontier = new_local

    def cat(name):
        chunks = parts[name]
        return np.concatenate(chunks).astype(np.int64) if chunks else np.zeros(0, dtype=np.int64)

    return (cat("ent"), cat("sub"), cat("hop")), (cat("eh"), cat("et"), cat("ei"), cat("ehop"))
