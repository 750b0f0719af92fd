"""Pure numpy implementations of the point-set kernels.

Selected at import time when the compiled extension is unavailable. Every
function mirrors the compiled core operation-for-operation (channelwise
sequential accumulation of squared distances, strict-< comparisons, first
occurrence on ties) so the two backends return bitwise-identical results.
"""

from __future__ import annotations

import numpy as np


def _sqdist_matrix(q: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # accumulate channel by channel: ((dx^2 + dy^2) + dz^2 + ...), the same
    # order the compiled inner loop uses
    d = np.zeros((q.shape[0], ref.shape[0]), dtype=np.float64)
    for c in range(q.shape[1]):
        diff = q[:, c][:, None] - ref[:, c][None, :]
        d += diff * diff
    return d


def knn_brute(ref: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Exact k nearest reference rows per query, sorted by (distance, index)."""
    d = _sqdist_matrix(queries, ref)
    order = np.argsort(d, axis=1, kind="stable")  # stable: ties keep lower index
    return np.ascontiguousarray(order[:, :k].astype(np.int64))


def fps(points: np.ndarray, m: int, start: int) -> np.ndarray:
    """Greedy farthest point sampling; ties resolved to the lowest index."""
    n = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    dmin = np.full(n, np.inf, dtype=np.float64)
    cur = int(start)
    for i in range(m):
        out[i] = cur
        p = points[cur]
        d = (points[:, 0] - p[0]) ** 2
        d += (points[:, 1] - p[1]) ** 2
        d += (points[:, 2] - p[2]) ** 2
        np.minimum(dmin, d, out=dmin)
        dmin[cur] = -1.0  # never reselect, even among coincident points
        cur = int(np.argmax(dmin))  # first occurrence = lowest index on ties
    return out


def nn_sqdist(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per row of `a`: squared distance to, and index of, its nearest row of `b`."""
    d = _sqdist_matrix(a, b)
    idx = np.argmin(d, axis=1)  # first occurrence = lowest index on ties
    return np.take_along_axis(d, idx[:, None], axis=1)[:, 0], idx.astype(np.int64)


def point_tri_sqdist(
    points: np.ndarray, va: np.ndarray, vb: np.ndarray, vc: np.ndarray
) -> np.ndarray:
    """Min squared distance from each point to any of the triangles (va, vb, vc).

    Region decomposition after Eberly's point/triangle algorithm; degenerate
    zero-area triangles are skipped.
    """
    e0 = vb - va
    e1 = vc - va
    a = (e0 * e0).sum(axis=1)
    b = (e0 * e1).sum(axis=1)
    c = (e1 * e1).sum(axis=1)
    det = a * c - b * b
    ok = det > 0.0
    if not ok.any():
        raise ValueError("point_tri_sqdist: every triangle is degenerate")
    va, e0, e1 = va[ok], e0[ok], e1[ok]
    a, b, c, det = a[ok], b[ok], c[ok], det[ok]

    out = np.empty(points.shape[0], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(points.shape[0]):
            dvec = va - points[i]
            d = (e0 * dvec).sum(axis=1)
            e = (e1 * dvec).sum(axis=1)
            f = (dvec * dvec).sum(axis=1)
            s = b * e - c * d
            t = b * d - a * e
            denom = a - 2.0 * b + c

            inside = s + t <= det
            # region 0
            s0 = s / det
            t0 = t / det
            # regions 3/5 style edge projections
            t_edge1 = np.clip(-e / c, 0.0, 1.0)  # s = 0 edge
            s_edge0 = np.clip(-d / a, 0.0, 1.0)  # t = 0 edge
            # region 4: pick whichever axis the gradient points along
            r4_on_s = d < 0.0
            s4 = np.where(r4_on_s, s_edge0, 0.0)
            t4 = np.where(r4_on_s, 0.0, t_edge1)
            # region 1: diagonal edge s + t = 1
            s1 = np.clip((c + e - b - d) / denom, 0.0, 1.0)
            t1 = 1.0 - s1
            # region 2: corner at (0, 1)
            r2_diag = (c + e) > (b + d)
            s2 = np.where(r2_diag, np.clip((c + e - b - d) / denom, 0.0, 1.0), 0.0)
            t2 = np.where(r2_diag, 1.0 - s2, t_edge1)
            # region 6: corner at (1, 0)
            r6_diag = (a + d) > (b + e)
            t6 = np.where(r6_diag, np.clip((a + d - b - e) / denom, 0.0, 1.0), 0.0)
            s6 = np.where(r6_diag, 1.0 - t6, s_edge0)

            s_in = np.where(s < 0.0, np.where(t < 0.0, s4, 0.0), np.where(t < 0.0, s_edge0, s0))
            t_in = np.where(s < 0.0, np.where(t < 0.0, t4, t_edge1), np.where(t < 0.0, 0.0, t0))
            s_out = np.where(s < 0.0, s2, np.where(t < 0.0, s6, s1))
            t_out = np.where(s < 0.0, t2, np.where(t < 0.0, t6, t1))
            ss = np.where(inside, s_in, s_out)
            tt = np.where(inside, t_in, t_out)

            q = (
                ss * (a * ss + b * tt + 2.0 * d)
                + tt * (b * ss + c * tt + 2.0 * e)
                + f
            )
            out[i] = max(float(q.min()), 0.0)
    return out
