# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled point-set kernels: brute-force kNN, farthest point sampling,
nearest-neighbor scans, and point-to-triangle distance.

Arithmetic mirrors the numpy fallback operation-for-operation so both
backends return bitwise-identical results.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc

cnp.import_array()


def knn_brute(double[:, ::1] ref, double[:, ::1] queries, Py_ssize_t k):
    """Exact k nearest reference rows per query, sorted by (distance, index)."""
    cdef Py_ssize_t m = ref.shape[0]
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t nc = ref.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((nq, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] ov = out
    cdef double* bd = <double*> malloc(k * sizeof(double))
    cdef Py_ssize_t* bi = <Py_ssize_t*> malloc(k * sizeof(Py_ssize_t))
    if bd == NULL or bi == NULL:
        free(bd)
        free(bi)
        raise MemoryError()
    cdef Py_ssize_t q, j, c, cnt, pos, t
    cdef double d, diff
    try:
        for q in range(nq):
            cnt = 0
            for j in range(m):
                d = 0.0
                for c in range(nc):
                    diff = queries[q, c] - ref[j, c]
                    d += diff * diff
                if cnt < k:
                    pos = cnt
                    cnt += 1
                elif d < bd[k - 1]:
                    pos = k - 1
                else:
                    continue
                # insertion keeps ascending (distance, index) order; on an
                # exact tie the earlier (lower) index stays in front
                while pos > 0 and d < bd[pos - 1]:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                    pos -= 1
                bd[pos] = d
                bi[pos] = j
            for t in range(k):
                ov[q, t] = bi[t]
    finally:
        free(bd)
        free(bi)
    return out


def fps(double[:, ::1] points, Py_ssize_t m, Py_ssize_t start):
    """Greedy farthest point sampling; ties resolved to the lowest index."""
    cdef Py_ssize_t n = points.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(m, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dmin_arr = np.full(n, np.inf)
    cdef double[::1] dmin = dmin_arr
    cdef Py_ssize_t cur = start
    cdef Py_ssize_t i, j, bestj
    cdef double px, py, pz, dx, dy, dz, d, best
    for i in range(m):
        ov[i] = cur
        px = points[cur, 0]
        py = points[cur, 1]
        pz = points[cur, 2]
        for j in range(n):
            dx = points[j, 0] - px
            d = dx * dx
            dy = points[j, 1] - py
            d += dy * dy
            dz = points[j, 2] - pz
            d += dz * dz
            if d < dmin[j]:
                dmin[j] = d
        dmin[cur] = -1.0  # never reselect, even among coincident points
        best = dmin[0]
        bestj = 0
        for j in range(1, n):
            if dmin[j] > best:
                best = dmin[j]
                bestj = j
        cur = bestj
    return out


def nn_sqdist(double[:, ::1] a, double[:, ::1] b):
    """Per row of `a`: squared distance to, and index of, its nearest row of `b`."""
    cdef Py_ssize_t na = a.shape[0]
    cdef Py_ssize_t nb = b.shape[0]
    cdef Py_ssize_t nc = a.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(na)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(na, dtype=np.int64)
    cdef double[::1] dv = dist
    cdef cnp.int64_t[::1] iv = idx
    cdef Py_ssize_t i, j, c, bestj
    cdef double d, diff, best
    for i in range(na):
        best = np.inf
        bestj = 0
        for j in range(nb):
            d = 0.0
            for c in range(nc):
                diff = a[i, c] - b[j, c]
                d += diff * diff
            if d < best:
                best = d
                bestj = j
        dv[i] = best
        iv[i] = bestj
    return dist, idx


cdef inline double _clamp01(double x) nogil:
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def point_tri_sqdist(double[:, ::1] points, double[:, ::1] va,
                     double[:, ::1] vb, double[:, ::1] vc):
    """Min squared distance from each point to any of the triangles (va, vb, vc).

    Region decomposition after Eberly's point/triangle algorithm; degenerate
    zero-area triangles are skipped.
    """
    cdef Py_ssize_t np_ = points.shape[0]
    cdef Py_ssize_t nt = va.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(np_)
    cdef double[::1] ov = out
    # precompute per-triangle edge quantities
    cdef cnp.ndarray[cnp.float64_t, ndim=2] e0_arr = np.empty((nt, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] e1_arr = np.empty((nt, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a_arr = np.empty(nt)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b_arr = np.empty(nt)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] c_arr = np.empty(nt)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] det_arr = np.empty(nt)
    cdef double[:, ::1] e0 = e0_arr
    cdef double[:, ::1] e1 = e1_arr
    cdef double[::1] av = a_arr
    cdef double[::1] bv = b_arr
    cdef double[::1] cv = c_arr
    cdef double[::1] detv = det_arr
    cdef Py_ssize_t i, j, c
    cdef bint any_ok = False
    for j in range(nt):
        for c in range(3):
            e0[j, c] = vb[j, c] - va[j, c]
            e1[j, c] = vc[j, c] - va[j, c]
        av[j] = e0[j, 0] * e0[j, 0] + e0[j, 1] * e0[j, 1] + e0[j, 2] * e0[j, 2]
        bv[j] = e0[j, 0] * e1[j, 0] + e0[j, 1] * e1[j, 1] + e0[j, 2] * e1[j, 2]
        cv[j] = e1[j, 0] * e1[j, 0] + e1[j, 1] * e1[j, 1] + e1[j, 2] * e1[j, 2]
        detv[j] = av[j] * cv[j] - bv[j] * bv[j]
        if detv[j] > 0.0:
            any_ok = True
    if not any_ok:
        raise ValueError("point_tri_sqdist: every triangle is degenerate")

    cdef double dv0, dv1, dv2, a, b, cc, d, e, f, det, s, t, denom, q, best
    for i in range(np_):
        best = np.inf
        for j in range(nt):
            det = detv[j]
            if det <= 0.0:
                continue
            a = av[j]
            b = bv[j]
            cc = cv[j]
            dv0 = va[j, 0] - points[i, 0]
            dv1 = va[j, 1] - points[i, 1]
            dv2 = va[j, 2] - points[i, 2]
            d = e0[j, 0] * dv0 + e0[j, 1] * dv1 + e0[j, 2] * dv2
            e = e1[j, 0] * dv0 + e1[j, 1] * dv1 + e1[j, 2] * dv2
            f = dv0 * dv0 + dv1 * dv1 + dv2 * dv2
            s = b * e - cc * d
            t = b * d - a * e
            denom = a - 2.0 * b + cc
            if s + t <= det:
                if s < 0.0:
                    if t < 0.0:  # region 4
                        if d < 0.0:
                            s = _clamp01(-d / a)
                            t = 0.0
                        else:
                            s = 0.0
                            t = _clamp01(-e / cc)
                    else:  # region 3
                        s = 0.0
                        t = _clamp01(-e / cc)
                elif t < 0.0:  # region 5
                    t = 0.0
                    s = _clamp01(-d / a)
                else:  # region 0
                    s = s / det
                    t = t / det
            else:
                if s < 0.0:  # region 2
                    if (cc + e) > (b + d):
                        s = _clamp01((cc + e - b - d) / denom)
                        t = 1.0 - s
                    else:
                        s = 0.0
                        t = _clamp01(-e / cc)
                elif t < 0.0:  # region 6
                    if (a + d) > (b + e):
                        t = _clamp01((a + d - b - e) / denom)
                        s = 1.0 - t
                    else:
                        t = 0.0
                        s = _clamp01(-d / a)
                else:  # region 1
                    s = _clamp01((cc + e - b - d) / denom)
                    t = 1.0 - s
            q = s * (a * s + b * t + 2.0 * d) + t * (b * s + cc * t + 2.0 * e) + f
            if q < best:
                best = q
        if best < 0.0:
            best = 0.0
        ov[i] = best
    return out
