# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled element-loop kernels; same signatures as ``nudgefem._fallback``."""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def advection_local(test_phi, trial_grads, wvals, weights):
    """X[e, i, j] = sum_q W[e, q] * test_phi[q, i] * (w[e, q] . grad trial_j[e, q])."""
    cdef const double[:, ::1] phi = np.ascontiguousarray(test_phi, dtype=np.float64)
    cdef const double[:, :, :, ::1] g = np.ascontiguousarray(trial_grads, dtype=np.float64)
    cdef const double[:, :, ::1] w = np.ascontiguousarray(wvals, dtype=np.float64)
    cdef const double[:, ::1] W = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t E = g.shape[0], Q = g.shape[1], nb = g.shape[2], na = phi.shape[1]
    out = np.zeros((E, na, nb))
    cdef double[:, :, ::1] X = out
    cdef double a[16]
    cdef double wq, wx, wy
    cdef Py_ssize_t e, q, i, j
    if nb > 16:
        raise ValueError("at most 16 trial functions per element")
    with nogil:
        for e in range(E):
            for q in range(Q):
                wx = w[e, q, 0]
                wy = w[e, q, 1]
                for j in range(nb):
                    a[j] = g[e, q, j, 0] * wx + g[e, q, j, 1] * wy
                for i in range(na):
                    wq = W[e, q] * phi[q, i]
                    for j in range(nb):
                        X[e, i, j] += wq * a[j]
    return out


def scatter_add(positions, values, Py_ssize_t size):
    """out[positions[k]] += values[k], accumulated in index order."""
    cdef const cnp.int64_t[::1] pos = np.ascontiguousarray(positions, dtype=np.int64)
    cdef const double[::1] val = np.ascontiguousarray(values, dtype=np.float64)
    if pos.shape[0] != val.shape[0]:
        raise ValueError("positions and values differ in length")
    out = np.zeros(size)
    cdef double[::1] o = out
    cdef Py_ssize_t k, n = pos.shape[0]
    for k in range(n):
        if pos[k] < 0 or pos[k] >= size:
            raise IndexError("scatter position out of range")
    with nogil:
        for k in range(n):
            o[pos[k]] += val[k]
    return out


def locate_points(pts, vertices, triangles, bins, offsets, bin_tris, double tol=1e-12):
    """First triangle in each point's bin containing it, with clamped barycentric coordinates."""
    cdef const double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef const double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] T = np.ascontiguousarray(triangles, dtype=np.int64)
    cdef const cnp.int64_t[::1] B = np.ascontiguousarray(bins, dtype=np.int64)
    cdef const cnp.int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const cnp.int64_t[::1] bt = np.ascontiguousarray(bin_tris, dtype=np.int64)
    cdef Py_ssize_t n = P.shape[0]
    tri_out = np.full(n, -1, dtype=np.int64)
    bary_out = np.zeros((n, 3))
    cdef cnp.int64_t[::1] tri = tri_out
    cdef double[:, ::1] bary = bary_out
    cdef Py_ssize_t k, m, t
    cdef double ax, ay, d1x, d1y, d2x, d2y, det, rx, ry, l0, l1, l2, s
    with nogil:
        for k in range(n):
            for m in range(off[B[k]], off[B[k] + 1]):
                t = bt[m]
                ax = V[T[t, 0], 0]
                ay = V[T[t, 0], 1]
                d1x = V[T[t, 1], 0] - ax
                d1y = V[T[t, 1], 1] - ay
                d2x = V[T[t, 2], 0] - ax
                d2y = V[T[t, 2], 1] - ay
                det = d1x * d2y - d1y * d2x
                rx = P[k, 0] - ax
                ry = P[k, 1] - ay
                l1 = (rx * d2y - ry * d2x) / det
                l2 = (d1x * ry - d1y * rx) / det
                l0 = 1.0 - l1 - l2
                if l0 >= -tol and l1 >= -tol and l2 >= -tol:
                    l0 = min(max(l0, 0.0), 1.0)
                    l1 = min(max(l1, 0.0), 1.0)
                    l2 = min(max(l2, 0.0), 1.0)
                    s = l0 + l1 + l2
                    tri[k] = t
                    bary[k, 0] = l0 / s
                    bary[k, 1] = l1 / s
                    bary[k, 2] = l2 / s
                    break
    return tri_out, bary_out
