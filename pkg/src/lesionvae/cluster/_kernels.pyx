# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled clustering kernels: Lloyd iterations and sorted aggregation.

Signature-compatible with the pure-numpy fallback in ``_kernels_py``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "compiled"


cdef double _sq_dist(const double[:, ::1] A, Py_ssize_t i,
                     const double[:, ::1] B, Py_ssize_t j,
                     Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t t
    for t in range(d):
        diff = A[i, t] - B[j, t]
        acc += diff * diff
    return acc


def lloyd(X, centers, int max_iter=300, double tol=1e-6):
    """Lloyd iterations from the given initial centers.

    Mirrors the fallback: empty clusters reseed to the farthest point,
    convergence at max centroid shift < tol.
    Returns (labels, centers, inertia, n_iter).
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] X_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] c_arr = np.array(centers, dtype=np.float64, order="C")
    cdef Py_ssize_t n = X_arr.shape[0]
    cdef Py_ssize_t d = X_arr.shape[1]
    cdef Py_ssize_t k = c_arr.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d_sq = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] new_c = np.zeros((k, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] counts = np.zeros(k, dtype=np.float64)

    cdef double[:, ::1] Xv = X_arr
    cdef double[:, ::1] cv = c_arr
    cdef double[:, ::1] ncv = new_c
    cdef cnp.int64_t[::1] lv = labels
    cdef double[::1] dv = d_sq
    cdef double[::1] cnts = counts

    cdef Py_ssize_t it, i, j, t, best, far
    cdef double dist, best_dist, shift, acc, diff, far_dist
    cdef int iters = 0

    for it in range(max_iter):
        iters = it + 1
        # assignment
        for i in range(n):
            best = 0
            best_dist = _sq_dist(Xv, i, cv, 0, d)
            for j in range(1, k):
                dist = _sq_dist(Xv, i, cv, j, d)
                if dist < best_dist:
                    best_dist = dist
                    best = j
            lv[i] = best
            dv[i] = best_dist
        # update
        for j in range(k):
            cnts[j] = 0.0
            for t in range(d):
                ncv[j, t] = 0.0
        for i in range(n):
            j = lv[i]
            cnts[j] += 1.0
            for t in range(d):
                ncv[j, t] += Xv[i, t]
        for j in range(k):
            if cnts[j] == 0.0:
                far = 0
                far_dist = dv[0]
                for i in range(1, n):
                    if dv[i] > far_dist:
                        far_dist = dv[i]
                        far = i
                for t in range(d):
                    ncv[j, t] = Xv[far, t]
                dv[far] = 0.0
                cnts[j] = 1.0
        shift = 0.0
        for j in range(k):
            acc = 0.0
            for t in range(d):
                ncv[j, t] /= cnts[j]
                diff = ncv[j, t] - cv[j, t]
                acc += diff * diff
            if acc > shift:
                shift = acc
            for t in range(d):
                cv[j, t] = ncv[j, t]
        if sqrt(shift) < tol:
            break

    cdef double inertia = 0.0
    for i in range(n):
        best = 0
        best_dist = _sq_dist(Xv, i, cv, 0, d)
        for j in range(1, k):
            dist = _sq_dist(Xv, i, cv, j, d)
            if dist < best_dist:
                best_dist = dist
                best = j
        lv[i] = best
        inertia += best_dist
    return labels, c_arr, inertia, iters


def classix_aggregate(X, scores, double radius):
    """Greedy sorted aggregation over score-sorted points.

    Returns (group labels, group starting indices) in sorted coordinates.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2] X_arr = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s_arr = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = X_arr.shape[0]
    cdef Py_ssize_t d = X_arr.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.full(n, -1, dtype=np.int64)
    cdef double[:, ::1] Xv = X_arr
    cdef double[::1] sv = s_arr
    cdef cnp.int64_t[::1] lv = labels
    cdef double r_sq = radius * radius
    cdef Py_ssize_t i, j, t
    cdef cnp.int64_t group = 0
    cdef double acc, diff
    starts = []
    for i in range(n):
        if lv[i] >= 0:
            continue
        lv[i] = group
        starts.append(i)
        for j in range(i + 1, n):
            if sv[j] - sv[i] > radius:
                break
            if lv[j] >= 0:
                continue
            acc = 0.0
            for t in range(d):
                diff = Xv[j, t] - Xv[i, t]
                acc += diff * diff
            if acc <= r_sq:
                lv[j] = group
        group += 1
    return labels, np.asarray(starts, dtype=np.int64)
