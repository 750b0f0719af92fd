"""Coordinate regression heads, the multi-scale training loss, and the
evaluation metrics (Chamfer, Hausdorff, point-to-surface).

Chamfer uses squared distances, averaged per direction and summed over
both directions; Hausdorff is the unsquared symmetric max. Reported
metric rows carry values in units of 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, kernels
from . import tensor as T
from .params import linear_params
from .tensor import Tensor, accumulate, constant, from_op


@dataclass
class LossConfig:
    alphas: tuple  # one weight per output scale, each in [0, 1]
    lam: float = 0.02  # repulsion weight
    rep_k: int = 5  # repulsion neighbors
    rep_h: float = 0.03  # repulsion radius, in unit-sphere patch units

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if not self.alphas or any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ValueError(f"LossConfig: alphas must lie in [0, 1], got {self.alphas}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"LossConfig: lambda must lie in [0, 1], got {self.lam}")
        if self.rep_k < 1 or self.rep_h <= 0.0:
            raise ValueError("LossConfig: need rep_k >= 1 and rep_h > 0")


def default_alphas(levels: int) -> tuple:
    """Per-scale supervision weights; the top three scales carry the weight
    when more than three are emitted."""
    if levels == 1:
        return (1.0,)
    if levels == 2:
        return (0.6, 1.0)
    return (0.0,) * (levels - 3) + (0.6, 0.8, 1.0)


@dataclass
class HeadParams:
    """2-layer shared MLP regressing features back to 3D coordinates."""

    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.fc1.w", self.fc1_w
        yield f"{prefix}.fc1.b", self.fc1_b
        yield f"{prefix}.fc2.w", self.fc2_w
        yield f"{prefix}.fc2.b", self.fc2_b


def init_head(rng: np.random.Generator, c2: int, hidden: int) -> HeadParams:
    w1, b1 = linear_params(rng, c2, hidden)
    w2, b2 = linear_params(rng, hidden, 3)
    return HeadParams(w1, b1, w2, b2)


def reconstruct(feats: Tensor, head: HeadParams) -> Tensor:
    """[M, C2] features -> [M, 3] coordinates; no activation on the output."""
    return T.linear(T.relu(T.linear(feats, head.fc1_w, head.fc1_b)), head.fc2_w, head.fc2_b)


def _as_tensor(x, name: str) -> Tensor:
    if isinstance(x, Tensor):
        if x.data.ndim != 2 or x.data.shape[1] != 3 or x.data.shape[0] < 1:
            raise ValueError(f"{name}: expected nonempty [M, 3], got {x.data.shape}")
        return x
    return constant(geometry.as_cloud(x, name))


def _nn_match(a: Tensor, b: Tensor) -> Tensor:
    """Per row of a: squared distance to its nearest row of b (lowest index on
    ties); gradient flows through the matched pairs into both sets."""
    d, idx = kernels.nn_sqdist(a.data, b.data)
    diff = a.data - b.data[idx]

    def bwd(g):
        accumulate(a, 2.0 * diff * g[:, None])
        if b.requires_grad:
            gb = np.zeros_like(b.data)
            np.add.at(gb, idx, -2.0 * diff * g[:, None])
            accumulate(b, gb)

    return from_op(d, (a, b), bwd)


def chamfer(s1, s2) -> Tensor:
    """Symmetric mean of squared nearest-neighbor distances (differentiable)."""
    a = _as_tensor(s1, "chamfer: s1")
    b = _as_tensor(s2, "chamfer: s2")
    return T.add(T.reduce_mean(_nn_match(a, b)), T.reduce_mean(_nn_match(b, a)))


def hausdorff(s1, s2) -> float:
    """Symmetric max of unsquared nearest-neighbor distances (evaluation only)."""
    a = geometry.as_cloud(np.asarray(s1, dtype=np.float64), "hausdorff: s1")
    b = geometry.as_cloud(np.asarray(s2, dtype=np.float64), "hausdorff: s2")
    d_ab, _ = kernels.nn_sqdist(a, b)
    d_ba, _ = kernels.nn_sqdist(b, a)
    return float(np.sqrt(max(d_ab.max(), d_ba.max())))


def repulsion(points: Tensor, k: int = 5, h: float = 0.03) -> Tensor:
    """Pushes each point away from its k nearest neighbors within radius ~h:
    mean over pairs of -d * exp(-d^2/h^2). Negative, approaching 0 once
    neighbors sit far apart; a coincident pair contributes exactly 0."""
    pts = points.data
    m = pts.shape[0]
    if k >= m:
        raise ValueError(f"repulsion: k={k} must be smaller than {m} points")
    idx_full = geometry.knn(pts, pts, k + 1)
    # drop one self-occurrence per row (first if present, else the last entry)
    self_hits = idx_full == np.arange(m)[:, None]
    drop = np.where(self_hits.any(axis=1), self_hits.argmax(axis=1), k)
    keep = np.arange(k + 1)[None, :] != drop[:, None]
    neigh = idx_full[keep].reshape(m, k)

    diff = pts[:, None, :] - pts[neigh]
    dist = np.sqrt((diff**2).sum(axis=2))
    weight = np.exp(-(dist**2) / (h * h))
    out = np.asarray(-(dist * weight).sum() / (m * k))

    def bwd(g):
        dterm = weight * (2.0 * dist * dist / (h * h) - 1.0)  # d(-d*w)/dd
        safe = np.where(dist > 0.0, dist, 1.0)
        unit = np.where(dist[:, :, None] > 0.0, diff / safe[:, :, None], 0.0)
        pair = (float(g) / (m * k)) * dterm[:, :, None] * unit
        grad = pair.sum(axis=1)
        np.add.at(grad, neigh.reshape(-1), -pair.reshape(-1, 3))
        accumulate(points, grad)

    return from_op(out, (points,), bwd)


def point_to_surface(points, mesh: geometry.Mesh) -> float:
    """Mean exact Euclidean distance from each point to the mesh surface."""
    pts = geometry.as_cloud(points, "point_to_surface")
    if len(mesh.triangles) == 0:
        raise ValueError("point_to_surface: mesh has no triangles")
    va, vb, vc = mesh.corners()
    return float(np.sqrt(kernels.point_tri_sqdist(pts, va, vb, vc)).mean())


def joint_loss_terms(gt, preds: list[Tensor], cfg: LossConfig):
    """Multi-scale loss sum(alpha_i * (CD(gt, pred_i) + lambda * rep(pred_i)))
    plus the per-scale CD tensors for logging.

    Every scale is compared against the same full-resolution ground truth;
    the ground truth is never downsampled for supervision.
    """
    if len(preds) != len(cfg.alphas):
        raise ValueError(
            f"joint_loss: {len(preds)} predictions but {len(cfg.alphas)} alphas"
        )
    gt_t = _as_tensor(gt, "joint_loss: gt")
    total = None
    cds = []
    for alpha, pred in zip(cfg.alphas, preds):
        cd = chamfer(gt_t, pred)
        cds.append(cd)
        if alpha == 0.0:
            continue  # unsupervised scale
        term = cd
        if cfg.lam > 0.0:
            term = T.add(term, T.smul(repulsion(pred, cfg.rep_k, cfg.rep_h), constant(cfg.lam)))
        weighted = T.smul(term, constant(alpha))
        total = weighted if total is None else T.add(total, weighted)
    if total is None:
        total = constant(0.0)
    return total, cds


def joint_loss(gt, preds: list[Tensor], cfg: LossConfig) -> Tensor:
    return joint_loss_terms(gt, preds, cfg)[0]


def format_metric_row(object_id: str, cd: float, hd: float, p2f: float | None = None) -> str:
    """Tab-separated metric row, values in units of 1e-3, 6 significant digits."""
    cols = [object_id, f"{cd * 1e3:.6g}", f"{hd * 1e3:.6g}"]
    if p2f is not None:
        cols.append(f"{p2f * 1e3:.6g}")
    return "\t".join(cols)
