"""Hot point-set kernels with a compiled core and a pure-numpy fallback.

The compiled Cython extension is preferred when it imported cleanly; the
numpy fallback is bitwise-identical (see test_kernels_parity), so which
backend runs never changes results, only speed. Set PUP3D_KERNELS=python
to force the fallback. `BACKEND` reports the selection;
`available_backends()` exposes both for parity tests and the benchmark
CLI.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _core
except ImportError:  # extension not built; pure python install
    _core = None

if _core is not None and os.environ.get("PUP3D_KERNELS", "") != "python":
    _impl = _core
    BACKEND = "compiled"
else:
    _impl = _fallback
    BACKEND = "python"


def available_backends() -> dict:
    out = {"python": _fallback}
    if _core is not None:
        out["compiled"] = _core
    return out


def _as_points(a, name: str, cols: int | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2 or (cols is not None and arr.shape[1] != cols):
        want = f"(*, {cols})" if cols is not None else "2-D"
        raise ValueError(f"{name}: expected {want} array, got shape {arr.shape}")
    return arr


def knn_brute(ref, queries, k: int) -> np.ndarray:
    ref = _as_points(ref, "knn_brute")
    queries = _as_points(queries, "knn_brute")
    return _impl.knn_brute(ref, queries, int(k))


def fps(points, m: int, start: int) -> np.ndarray:
    points = _as_points(points, "fps", 3)
    return _impl.fps(points, int(m), int(start))


def nn_sqdist(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = _as_points(a, "nn_sqdist", 3)
    b = _as_points(b, "nn_sqdist", 3)
    return _impl.nn_sqdist(a, b)


def point_tri_sqdist(points, va, vb, vc) -> np.ndarray:
    points = _as_points(points, "point_tri_sqdist", 3)
    va = _as_points(va, "point_tri_sqdist", 3)
    vb = _as_points(vb, "point_tri_sqdist", 3)
    vc = _as_points(vc, "point_tri_sqdist", 3)
    return _impl.point_tri_sqdist(points, va, vb, vc)
