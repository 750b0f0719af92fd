"""Full model assembly: config presets, parameter registry, forward pass,
and patch-based whole-object inference."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import geometry
from .extractor import ExtractorParams, extract_features, init_extractor
from .losses import HeadParams, init_head, reconstruct
from .pyramid import PyramidParams, expand, init_pyramid
from .tensor import Tensor


@dataclass
class ModelConfig:
    ratio: int = 4  # power of two; levels = log2(ratio)
    k: int = 16
    c0: int = 24
    g: int = 208
    num_units: int = 3
    c2: int = 128
    head_hidden: int = 64
    fuse_eps: float = 1e-4
    fusion: bool = True  # False: left pathway only (ablation)
    residual: bool = True  # False: plain shared MLPs (ablation)

    def __post_init__(self):
        if self.ratio < 2 or self.ratio & (self.ratio - 1):
            raise ValueError(f"ModelConfig: ratio must be a power of two >= 2, got {self.ratio}")

    @property
    def levels(self) -> int:
        return self.ratio.bit_length() - 1

    @property
    def c1(self) -> int:
        return self.c0 + self.num_units * self.g

    @classmethod
    def full(cls, ratio: int = 4, **kw) -> "ModelConfig":
        """Full-scale widths: C1 = 24 + 3*208 = 648, C2 = 128."""
        return cls(ratio=ratio, **kw)

    @classmethod
    def desk(cls, ratio: int = 4, **kw) -> "ModelConfig":
        """Small widths for fast tests: C1 = 8 + 3*24 = 80, C2 = 32."""
        return cls(ratio=ratio, c0=8, g=24, c2=32, head_hidden=32, **kw)


@dataclass
class ModelParams:
    extractor: ExtractorParams
    pyramid: PyramidParams
    heads: list[HeadParams]

    def named(self):
        """All parameters as (name, tensor), in a fixed order."""
        yield from self.extractor.named()
        yield from self.pyramid.named()
        for i, head in enumerate(self.heads, start=1):
            yield from head.named(f"head{i}")

    def zero_grad(self):
        for _, t in self.named():
            t.grad = None


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    ext = init_extractor(rng, cfg.c0, cfg.g, cfg.num_units)
    pyr = init_pyramid(
        rng, cfg.c1, cfg.c2, cfg.levels,
        fusion=cfg.fusion, residual=cfg.residual, eps=cfg.fuse_eps,
    )
    heads = [init_head(rng, cfg.c2, cfg.head_hidden) for _ in range(cfg.levels)]
    return ModelParams(ext, pyr, heads)


def forward(params: ModelParams, cfg: ModelConfig, points) -> list[Tensor]:
    """Sparse [N, 3] patch -> L predictions of shapes [2^l * N, 3], l = 1..L."""
    pts = points if isinstance(points, Tensor) else Tensor(points)
    feats = extract_features(pts, params.extractor, cfg.k)
    ups = expand(feats, params.pyramid)
    return [reconstruct(f, head) for f, head in zip(ups, params.heads)]


def upsample_object(
    params: ModelParams,
    cfg: ModelConfig,
    points,
    patch_size: int,
    threads: int = 1,
) -> np.ndarray:
    """Patch-based whole-object upsampling to exactly ratio * M points.

    FPS query points seed overlapping kNN patches; each patch is normalized
    to the unit sphere, run through the network, and its top-scale output
    denormalized; the union is FPS-thinned to the target count.
    """
    pts = geometry.as_cloud(points)
    if len(pts) < patch_size:
        raise ValueError(
            f"upsample_object: input has {len(pts)} points, patch size is {patch_size}"
        )
    num_seeds = geometry.default_num_seeds(len(pts), patch_size)
    patches = geometry.extract_patches(pts, patch_size, num_seeds)

    def run_patch(patch):
        _, cloud = patch
        normed, rec = geometry.normalize_to_unit_sphere(cloud)
        preds = forward(params, cfg, normed)  # no tape: forward only
        return geometry.denormalize(preds[-1].data, rec)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run_patch, patches))
    else:
        outputs = [run_patch(p) for p in patches]
    return geometry.merge_patches(outputs, cfg.ratio * len(pts))
