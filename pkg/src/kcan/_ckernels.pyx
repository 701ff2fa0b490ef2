# distutils: language = c++
# Compiled twins of the functions in _pykernels.py; signatures must match.
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector
from cython.operator cimport dereference as deref

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef int _check_range(const i64[::1] ix, Py_ssize_t upper, str what) except -1:
    # bounds checks are compiled out, so validate indices once up front
    cdef Py_ssize_t i
    cdef i64 lo = 0, hi = -1
    if ix.shape[0] == 0:
        return 0
    lo = ix[0]
    hi = ix[0]
    for i in range(1, ix.shape[0]):
        if ix[i] < lo:
            lo = ix[i]
        elif ix[i] > hi:
            hi = ix[i]
    if lo < 0 or hi >= upper:
        raise IndexError(f"{what} index out of range [0, {upper})")
    return 0


cdef int _check_indptr(const i64[::1] ptr, Py_ssize_t n_entries) except -1:
    cdef Py_ssize_t s
    if ptr.shape[0] == 0 or ptr[0] != 0 or ptr[ptr.shape[0] - 1] != n_entries:
        raise ValueError("indptr must start at 0 and end at the entry count")
    for s in range(ptr.shape[0] - 1):
        if ptr[s + 1] < ptr[s]:
            raise ValueError("indptr must be non-decreasing")
    return 0



def segment_softmax(logits, indptr):
    cdef const f64[::1] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    _check_indptr(ptr, z.shape[0])
    out_arr = np.empty(z.shape[0], dtype=np.float64)
    cdef f64[::1] out = out_arr
    cdef Py_ssize_t s, e, n_seg = ptr.shape[0] - 1
    cdef f64 m, total
    with nogil:
        for s in range(n_seg):
            if ptr[s + 1] <= ptr[s]:
                continue
            m = z[ptr[s]]
            for e in range(ptr[s] + 1, ptr[s + 1]):
                if z[e] > m:
                    m = z[e]
            total = 0.0
            for e in range(ptr[s], ptr[s + 1]):
                out[e] = exp(z[e] - m)
                total += out[e]
            for e in range(ptr[s], ptr[s + 1]):
                out[e] /= total
    return out_arr


def segment_softmax_backward(probs, grad_out, indptr):
    cdef const f64[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef const f64[::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    _check_indptr(ptr, p.shape[0])
    if g.shape[0] != p.shape[0]:
        raise ValueError("probs and grad_out differ in length")
    out_arr = np.empty(p.shape[0], dtype=np.float64)
    cdef f64[::1] out = out_arr
    cdef Py_ssize_t s, e, n_seg = ptr.shape[0] - 1
    cdef f64 dot
    with nogil:
        for s in range(n_seg):
            dot = 0.0
            for e in range(ptr[s], ptr[s + 1]):
                dot += p[e] * g[e]
            for e in range(ptr[s], ptr[s + 1]):
                out[e] = p[e] * (g[e] - dot)
    return out_arr


def spmm(indptr, cols, weights, x):
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const i64[::1] col = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const f64[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const f64[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n_seg = ptr.shape[0] - 1, dim = xv.shape[1]
    _check_indptr(ptr, col.shape[0])
    _check_range(col, xv.shape[0], "column")
    if w.shape[0] != col.shape[0]:
        raise ValueError("weights and cols differ in length")
    out_arr = np.zeros((n_seg, dim), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    cdef Py_ssize_t s, e, k
    cdef i64 c
    cdef f64 we
    with nogil:
        for s in range(n_seg):
            for e in range(ptr[s], ptr[s + 1]):
                c = col[e]
                we = w[e]
                for k in range(dim):
                    out[s, k] += we * xv[c, k]
    return out_arr


def spmm_backward(indptr, cols, weights, x, grad_out):
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const i64[::1] col = np.ascontiguousarray(cols, dtype=np.int64)
    cdef const f64[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const f64[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const f64[:, ::1] go = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t n_seg = ptr.shape[0] - 1, dim = xv.shape[1]
    _check_indptr(ptr, col.shape[0])
    _check_range(col, xv.shape[0], "column")
    if w.shape[0] != col.shape[0] or go.shape[0] != n_seg or go.shape[1] != dim:
        raise ValueError("shape mismatch in spmm_backward")
    gw_arr = np.zeros(col.shape[0], dtype=np.float64)
    gx_arr = np.zeros((xv.shape[0], dim), dtype=np.float64)
    cdef f64[::1] gw = gw_arr
    cdef f64[:, ::1] gx = gx_arr
    cdef Py_ssize_t s, e, k
    cdef i64 c
    cdef f64 acc, we
    with nogil:
        for s in range(n_seg):
            for e in range(ptr[s], ptr[s + 1]):
                c = col[e]
                we = w[e]
                acc = 0.0
                for k in range(dim):
                    acc += go[s, k] * xv[c, k]
                    gx[c, k] += we * go[s, k]
                gw[e] = acc
    return gw_arr, gx_arr


def scatter_add_rows(n_rows, idx, values):
    vals = np.asarray(values, dtype=np.float64)
    cdef const i64[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t i, k, n = ix.shape[0]
    cdef const f64[::1] v1
    cdef f64[::1] o1
    cdef const f64[:, ::1] v2
    cdef f64[:, ::1] o2
    _check_range(ix, n_rows, "row")
    if vals.shape[0] != n:
        raise ValueError("idx and values differ in length")
    if vals.ndim == 1:
        out1 = np.zeros(n_rows, dtype=np.float64)
        v1 = np.ascontiguousarray(vals)
        o1 = out1
        with nogil:
            for i in range(n):
                o1[ix[i]] += v1[i]
        return out1
    flat = np.ascontiguousarray(vals.reshape(vals.shape[0], int(np.prod(vals.shape[1:]))))
    out2 = np.zeros((n_rows, flat.shape[1]), dtype=np.float64)
    v2 = flat
    o2 = out2
    cdef Py_ssize_t dim = flat.shape[1]
    with nogil:
        for i in range(n):
            for k in range(dim):
                o2[ix[i], k] += v2[i, k]
    return out2.reshape((n_rows,) + vals.shape[1:])


def sample_rows(indptr, cdf, nodes, uniforms):
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const f64[::1] c = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const i64[::1] nd = np.ascontiguousarray(nodes, dtype=np.int64)
    u_arr = np.ascontiguousarray(uniforms, dtype=np.float64)
    if u_arr.ndim != 2:
        u_arr = u_arr.reshape(nd.shape[0], u_arr.size // max(nd.shape[0], 1))
    cdef const f64[:, ::1] u = u_arr
    _check_indptr(ptr, c.shape[0])
    _check_range(nd, ptr.shape[0] - 1, "node")
    if u.shape[0] != nd.shape[0]:
        raise ValueError("one row of uniforms per node expected")
    out_arr = np.full((u.shape[0], u.shape[1]), -1, dtype=np.int64)
    cdef i64[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef i64 lo, hi, mid, start, end
    cdef f64 x
    with nogil:
        for i in range(u.shape[0]):
            start = ptr[nd[i]]
            end = ptr[nd[i] + 1]
            if end <= start:
                continue
            for j in range(u.shape[1]):
                x = u[i, j]
                lo = start
                hi = end - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if c[mid] > x:
                        hi = mid
                    else:
                        lo = mid + 1
                out[i, j] = lo
    return out_arr


cdef void _sort_small(i64* buf, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef i64 x
    for i in range(1, n):
        x = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > x:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = x


cdef object _to_array(vector[i64]& v):
    if v.size() == 0:
        return np.zeros(0, dtype=np.int64)
    return np.asarray(<i64[:v.size()]>v.data()).copy()


cdef i64 _MISSING = -(1 << 62)


cdef class _KeyTable:
    # key -> value; dense array for small key spaces, hash map otherwise
    cdef bint dense
    cdef i64[::1] table
    cdef unordered_map[i64, i64] table_map

    def __init__(self, i64 key_space, Py_ssize_t expected):
        self.dense = key_space <= (1 << 25)
        if self.dense:
            self.table = np.full(max(key_space, 1), _MISSING, dtype=np.int64)
        else:
            self.table_map.reserve(expected)

    cdef inline i64 get(self, i64 key) noexcept nogil:
        if self.dense:
            return self.table[key]
        it = self.table_map.find(key)
        if it == self.table_map.end():
            return _MISSING
        return deref(it).second

    cdef inline void put(self, i64 key, i64 value) noexcept nogil:
        if self.dense:
            self.table[key] = value
        else:
            self.table_map[key] = value


def bfs_sample(indptr, cdf, tails, targets_flat, n_ent, hops, m, rng):
    cdef const i64[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const f64[::1] c = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef const i64[::1] tl = np.ascontiguousarray(tails, dtype=np.int64)
    tg = np.ascontiguousarray(targets_flat, dtype=np.int64)
    cdef i64 N = n_ent
    cdef Py_ssize_t M = m
    cdef Py_ssize_t n0 = tg.shape[0]
    # visited nodes map to their local id (>= 0); nodes first reached in the
    # current hop map to -1 - provisional index
    cdef _KeyTable seen = _KeyTable(((n0 + 1) // 2) * N, 4 * n0 * (M + 1))
    cdef vector[i64] node_ent, node_sub, node_hop
    cdef vector[i64] e_head, e_tail, e_id, e_hop, new_keys
    cdef Py_ssize_t k, f, j, q, n_frontier, n_local, first_new, start_edge, n_new
    cdef i64 key, lo, hi, mid, start, end, prev, hop, found
    cdef i64 n_hops = hops
    cdef f64 x
    cdef const f64[:, ::1] u
    cdef const i64[::1] tgv = tg
    cdef i64[::1] rank_v
    cdef const i64[::1] sorted_v
    cdef vector[i64] buf
    _check_indptr(ptr, c.shape[0])
    _check_range(tgv, N, "target")
    _check_range(tl, N, "tail")
    if ptr.shape[0] != N + 1 or tl.shape[0] != c.shape[0]:
        raise ValueError("indptr, cdf and tails must describe one graph over n_ent entities")
    buf.resize(M if M > 0 else 1)

    for k in range(n0):
        node_ent.push_back(tgv[k])
        node_sub.push_back(k // 2)
        node_hop.push_back(0)
        key = (k // 2) * N + tgv[k]
        if seen.get(key) == _MISSING:
            seen.put(key, k)
    n_local = n0
    first_new = 0
    n_frontier = n0
    for hop in range(1, n_hops + 1):
        if n_frontier == 0 or M <= 0 or tl.shape[0] == 0:
            break
        u = np.ascontiguousarray(rng.random((n_frontier, M)), dtype=np.float64)
        new_keys.clear()
        start_edge = e_head.size()
        with nogil:
            for f in range(n_frontier):
                q = first_new + f
                start = ptr[node_ent[q]]
                end = ptr[node_ent[q] + 1]
                if end <= start:
                    continue
                for j in range(M):
                    x = u[f, j]
                    lo = start
                    hi = end - 1
                    while lo < hi:
                        mid = (lo + hi) // 2
                        if c[mid] > x:
                            hi = mid
                        else:
                            lo = mid + 1
                    buf[j] = lo
                _sort_small(&buf[0], M)
                prev = -1
                for j in range(M):
                    if buf[j] == prev:
                        continue
                    prev = buf[j]
                    key = node_sub[q] * N + tl[prev]
                    e_head.push_back(q)
                    e_id.push_back(prev)
                    e_hop.push_back(hop)
                    found = seen.get(key)
                    if found == _MISSING:
                        found = -1 - <i64>new_keys.size()
                        seen.put(key, found)
                        new_keys.push_back(key)
                    e_tail.push_back(found)
        keys_arr = _to_array(new_keys)
        order = np.argsort(keys_arr, kind="stable")
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order), dtype=np.int64)
        rank_v = rank
        sorted_v = keys_arr[order]
        n_new = len(order)
        with nogil:
            for k in range(start_edge, <Py_ssize_t>e_tail.size()):
                if e_tail[k] < 0:
                    e_tail[k] = n_local + rank_v[-1 - e_tail[k]]
            for k in range(n_new):
                key = sorted_v[k]
                seen.put(key, n_local + k)
                node_ent.push_back(key % N)
                node_sub.push_back(key // N)
                node_hop.push_back(hop)
        first_new = n_local
        n_frontier = n_new
        n_local += n_frontier

    return (_to_array(node_ent), _to_array(node_sub), _to_array(node_hop)), (
        _to_array(e_head), _to_array(e_tail), _to_array(e_id), _to_array(e_hop))
