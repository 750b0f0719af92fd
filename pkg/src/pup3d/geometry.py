"""Point-set kernels and data preparation: kNN / FPS, surface sampling,
patch extraction and merging, normalization, augmentation, and the OFF /
XYZ file formats.

Everything here is a pure function of its inputs plus an explicit numpy
Generator, so patches can be processed in parallel as long as each task
gets its own seeded stream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

_GRID_THRESHOLD = 2048


@dataclass
class Mesh:
    """Triangle mesh: vertices [V, 3] float64, triangles [T, 3] int64."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"Mesh: vertices must be [V, 3], got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"Mesh: triangles must be [T, 3], got {self.triangles.shape}")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("Mesh: triangle index out of range")

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class NormRecord:
    """Centering/scaling applied by normalize_to_unit_sphere; invertible."""

    center: np.ndarray
    radius: float


@dataclass
class AugmentConfig:
    rotate: bool = True
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    shift: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.scale_lo <= self.scale_hi):
            raise ValueError(f"AugmentConfig: bad scale range [{self.scale_lo}, {self.scale_hi}]")
        if self.shift < 0.0:
            raise ValueError(f"AugmentConfig: shift bound must be >= 0, got {self.shift}")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(rotate=False, scale_lo=1.0, scale_hi=1.0, shift=0.0)


def as_cloud(points, name: str = "points") -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"{name}: expected [M, 3] with M >= 1, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name}: coordinates must be finite")
    return pts


# ---------------------------------------------------------------------------
# nearest neighbors / sampling
# ---------------------------------------------------------------------------


def knn(reference, queries, k: int) -> np.ndarray:
    """Exact k nearest reference rows per query, ascending by (distance, index).

    Works on 3-D coordinates or feature rows of any width; self-queries
    include the query row itself (distance zero). Large 3-D references are
    routed through an exact uniform-grid search whose results match the
    brute-force scan index-for-index.
    """
    ref = np.ascontiguousarray(reference, dtype=np.float64)
    q = np.ascontiguousarray(queries, dtype=np.float64)
    if ref.ndim != 2 or q.ndim != 2 or ref.shape[1] != q.shape[1]:
        raise ValueError(f"knn: incompatible shapes ref{ref.shape} vs queries{q.shape}")
    if not 1 <= k <= ref.shape[0]:
        raise ValueError(f"knn: k={k} out of range for {ref.shape[0]} reference rows")
    if ref.shape[0] > _GRID_THRESHOLD and ref.shape[1] == 3:
        return _knn_grid(ref, q, k)
    return kernels.knn_brute(ref, q, k)


def _knn_grid(ref: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    """Uniform-grid kNN over 3-D points; exact, including the tie rule."""
    lo = ref.min(axis=0)
    extent = float((ref.max(axis=0) - lo).max())
    if extent <= 0.0:  # all reference points coincide
        return kernels.knn_brute(ref, q, k)
    ncell = max(1, int(round((ref.shape[0] / 8.0) ** (1.0 / 3.0))))
    cell = extent / ncell
    keys = np.floor((ref - lo) / cell).astype(np.int64)
    buckets: dict[tuple, list] = {}
    for j, key in enumerate(map(tuple, keys)):
        buckets.setdefault(key, []).append(j)
    packed = {key: np.asarray(v, dtype=np.int64) for key, v in buckets.items()}

    out = np.empty((q.shape[0], k), dtype=np.int64)
    kmax = keys.max(axis=0)
    kmin = keys.min(axis=0)
    for qi in range(q.shape[0]):
        base = np.floor((q[qi] - lo) / cell).astype(np.int64)
        # shells beyond this radius cannot contain any reference point
        rho_cover = int(max(np.maximum(base - kmin, kmax - base).max(), 0)) + 1
        cand: list[np.ndarray] = []
        count = 0
        rho = 0
        while True:
            for off in itertools.product(range(-rho, rho + 1), repeat=3):
                if max(abs(off[0]), abs(off[1]), abs(off[2])) != rho:
                    continue
                hit = packed.get((base[0] + off[0], base[1] + off[1], base[2] + off[2]))
                if hit is not None:
                    cand.append(hit)
                    count += len(hit)
            if count >= k:
                ci = np.sort(np.concatenate(cand))
                diff = ref[ci] - q[qi]
                d = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
                kth = np.partition(d, k - 1)[k - 1]
                # any unexplored point sits at squared distance >= (rho*cell)^2;
                # strict < also rules out cross-boundary ties
                if kth < (rho * cell) ** 2 or count == ref.shape[0] or rho >= rho_cover:
                    order = np.argsort(d, kind="stable")
                    out[qi] = ci[order[:k]]
                    break
            elif rho >= rho_cover:
                raise AssertionError("grid knn failed to cover the reference set")
            rho += 1
    return out


def farthest_point_sample(points, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min subset selection; ties broken by the lowest index."""
    pts = as_cloud(points)
    if not 1 <= m <= len(pts):
        raise ValueError(f"farthest_point_sample: m={m} out of range for {len(pts)} points")
    if not 0 <= start < len(pts):
        raise ValueError(f"farthest_point_sample: start={start} out of range")
    return kernels.fps(pts, m, start)


def random_subsample(points, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of m indices without replacement (Monte-Carlo downsampling)."""
    pts = as_cloud(points)
    if m > len(pts):
        raise ValueError(f"random_subsample: m={m} exceeds {len(pts)} points")
    return rng.choice(len(pts), size=m, replace=False).astype(np.int64)


def sample_mesh_uniform(mesh: Mesh, m: int, rng: np.random.Generator) -> np.ndarray:
    """m points uniform over the surface: triangles by area, barycentric inside."""
    areas = mesh.areas()
    total = areas.sum()
    if total <= 0.0:
        raise ValueError("sample_mesh_uniform: mesh has zero total area")
    tri = rng.choice(len(areas), size=m, p=areas / total)
    a, b, c = mesh.corners()
    u = rng.random(m)
    v = rng.random(m)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return a[tri] + u[:, None] * (b[tri] - a[tri]) + v[:, None] * (c[tri] - a[tri])


def poisson_like_sample(
    mesh: Mesh, m: int, rng: np.random.Generator, oversample: int = 3
) -> np.ndarray:
    """Blue-noise-like surface sampling: oversample uniformly, thin by FPS.

    Stands in for true Poisson disk sampling; the FPS thinning yields a
    visibly more even spacing than raw uniform sampling.
    """
    if oversample < 2:
        raise ValueError(f"poisson_like_sample: oversample must be >= 2, got {oversample}")
    raw = sample_mesh_uniform(mesh, oversample * m, rng)
    return raw[farthest_point_sample(raw, m, start=0)]


# ---------------------------------------------------------------------------
# normalization / augmentation
# ---------------------------------------------------------------------------


def normalize_to_unit_sphere(points) -> tuple[np.ndarray, NormRecord]:
    """Center on the centroid and scale by the max radius into the unit ball."""
    pts = as_cloud(points)
    center = pts.mean(axis=0)
    shifted = pts - center
    radius = float(np.sqrt((shifted**2).sum(axis=1).max()))
    if radius == 0.0:  # all points coincide
        radius = 1.0
    return shifted / radius, NormRecord(center=center, radius=radius)


def denormalize(points, record: NormRecord) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) * record.radius + record.center


def apply_record(points, record: NormRecord) -> np.ndarray:
    """Map points into the frame defined by an existing NormRecord."""
    return (np.asarray(points, dtype=np.float64) - record.center) / record.radius


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix uniform over SO(3) (Shoemake's quaternion method)."""
    u1, u2, u3 = rng.random(3)
    qx = math.sqrt(1.0 - u1) * math.sin(2.0 * math.pi * u2)
    qy = math.sqrt(1.0 - u1) * math.cos(2.0 * math.pi * u2)
    qz = math.sqrt(u1) * math.sin(2.0 * math.pi * u3)
    qw = math.sqrt(u1) * math.cos(2.0 * math.pi * u3)
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def augment(
    input_pts, gt_pts, rng: np.random.Generator, cfg: AugmentConfig
) -> tuple[np.ndarray, np.ndarray]:
    """One random rotation/scale/shift draw, applied identically to both clouds."""
    inp = as_cloud(input_pts, "input")
    gt = as_cloud(gt_pts, "gt")
    if cfg.rotate:
        rot = random_rotation(rng)
        inp = inp @ rot.T
        gt = gt @ rot.T
    scale = rng.uniform(cfg.scale_lo, cfg.scale_hi)
    shift = rng.uniform(-cfg.shift, cfg.shift, size=3)
    return inp * scale + shift, gt * scale + shift


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def extract_patches(
    points, patch_size: int, num_seeds: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Overlapping kNN patches around FPS-spread seed points.

    Returns (indices, points) per patch. When num_seeds * patch_size >= M
    the union of patches must cover every input point; that is checked, not
    assumed.
    """
    pts = as_cloud(points)
    if patch_size > len(pts):
        raise ValueError(f"extract_patches: patch_size={patch_size} exceeds {len(pts)} points")
    if num_seeds < 1:
        raise ValueError(f"extract_patches: num_seeds must be >= 1, got {num_seeds}")
    seeds = farthest_point_sample(pts, min(num_seeds, len(pts)), start=0)
    idx = knn(pts, pts[seeds], patch_size)
    patches = [(idx[i], pts[idx[i]]) for i in range(len(seeds))]
    if num_seeds * patch_size >= len(pts):
        covered = np.zeros(len(pts), dtype=bool)
        covered[idx.reshape(-1)] = True
        if not covered.all():
            raise AssertionError("extract_patches: patches failed to cover the input")
    return patches


def merge_patches(clouds, target: int) -> np.ndarray:
    """Concatenate patch outputs and FPS-thin to exactly `target` points."""
    stacked = np.vstack([as_cloud(c, "patch") for c in clouds])
    if len(stacked) < target:
        raise ValueError(
            f"merge_patches: {len(stacked)} points available, {target} requested"
        )
    return stacked[farthest_point_sample(stacked, target, start=0)]


def default_num_seeds(num_points: int, patch_size: int) -> int:
    """Coverage-driven patch count: 3x oversampled FPS seeding."""
    return max(1, math.ceil(3.0 * num_points / patch_size))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def read_off(path) -> Mesh:
    """ASCII OFF: header, counts, vertex lines, triangle face lines."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh]
    rows = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]
    if not rows or rows[0][1] != "OFF":
        raise ValueError(f"{path}: not an OFF file (missing 'OFF' header)")
    try:
        nv, nf, _ = (int(tok) for tok in rows[1][1].split())
    except (IndexError, ValueError) as err:
        raise ValueError(f"{path}: bad OFF counts line") from err
    if len(rows) < 2 + nv + nf:
        raise ValueError(f"{path}: truncated OFF file")
    verts = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        lineno, ln = rows[2 + i]
        tok = ln.split()
        if len(tok) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 vertex coordinates")
        verts[i] = [float(t) for t in tok]
    tris = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        lineno, ln = rows[2 + nv + i]
        tok = ln.split()
        if len(tok) != 4 or tok[0] != "3":
            raise ValueError(f"{path}:{lineno}: only triangle faces are supported")
        tris[i] = [int(t) for t in tok[1:]]
    return Mesh(vertices=verts, triangles=tris)


def write_xyz(path, points) -> None:
    """One 'x y z' line per point; coordinates rounded to float32."""
    pts = as_cloud(points).astype(np.float32)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for p in pts:
            fh.write(
                f"{np.format_float_positional(p[0], unique=True)} "
                f"{np.format_float_positional(p[1], unique=True)} "
                f"{np.format_float_positional(p[2], unique=True)}\n"
            )


def read_xyz(path) -> np.ndarray:
    pts = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, ln in enumerate(fh, start=1):
            ln = ln.strip()
            if not ln:
                continue
            tok = ln.split()
            if len(tok) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'x y z'")
            try:
                pts.append([float(t) for t in tok])
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: bad coordinate") from err
    if not pts:
        raise ValueError(f"{path}: empty point cloud")
    return np.asarray(pts, dtype=np.float64)


def write_off(path, mesh: Mesh) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.triangles)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def icosphere(subdivisions: int = 2) -> Mesh:
    """Unit-sphere triangulation by icosahedron subdivision (toy/test meshes)."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=np.float64) for v in verts]
    verts = [v / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                mid = verts[i] + verts[j]
                verts.append(mid / np.linalg.norm(mid))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(vertices=np.vstack(verts), triangles=np.asarray(faces, dtype=np.int64))
