"""Benchmark the compiled kernel core against the numpy fallback."""

from __future__ import annotations

import time

import numpy as np

from . import geometry, kernels


def _time(fn, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(scale: float = 1.0):
    rng = np.random.default_rng(0)
    n = max(256, int(2048 * scale))
    pts = np.ascontiguousarray(rng.normal(size=(n, 3)))
    feats = np.ascontiguousarray(rng.normal(size=(max(64, int(256 * scale)), 648)))
    a = np.ascontiguousarray(rng.normal(size=(n, 3)))
    b = np.ascontiguousarray(rng.normal(size=(n, 3)))
    mesh = geometry.icosphere(2)
    va, vb, vc = (np.ascontiguousarray(x) for x in mesh.corners())
    return [
        (f"knn coords {n}x{n} k=16", lambda m: m.knn_brute(pts, pts, 16)),
        (
            f"knn feature {feats.shape[0]}x{feats.shape[0]} C=648 k=16",
            lambda m: m.knn_brute(feats, feats, 16),
        ),
        (f"fps {n} -> {n // 4}", lambda m: m.fps(pts, n // 4, 0)),
        (f"nn scan {n} vs {n}", lambda m: m.nn_sqdist(a, b)),
        (
            f"point-tri {n} pts x {len(va)} tris",
            lambda m: m.point_tri_sqdist(pts, va, vb, vc),
        ),
    ]


def run_benchmark(scale: float = 1.0) -> str:
    backends = kernels.available_backends()
    rows = [f"selected backend: {kernels.BACKEND}", ""]
    header = f"{'kernel'.ljust(40)} " + " ".join(f"{n:>12}" for n in backends)
    if "compiled" in backends:
        header += f" {'speedup':>9}"
    rows.append(header)
    for name, call in _cases(scale):
        times = {bname: _time(lambda m=mod: call(m)) for bname, mod in backends.items()}
        line = f"{name.ljust(40)} " + " ".join(f"{times[n] * 1e3:>10.2f}ms" for n in backends)
        if "compiled" in times:
            line += f" {times['python'] / times['compiled']:>8.1f}x"
        rows.append(line)
    return "\n".join(rows)
