"""Bi-directional multi-scale feature expansion.

A left pathway of factor-2 up operators lifts the entry feature through L
resolutions; a middle top-down pathway fuses each level with the
downsampled level above; a right bottom-up pathway fuses the left and
middle features with the upsampled level below. Fusion nodes are learned
nonnegative weighted averages. The L right-pathway outputs (levels 1..L,
sizes 2^l * N) are the expanded features handed to the coordinate heads.

With fusion disabled (ablation) the left pathway alone feeds the heads;
with residual blocks disabled every block degrades to its plain two-layer
shared MLP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .params import linear_params
from .tensor import Tensor, constant


@dataclass
class ResidualParams:
    """linear -> relu -> linear plus a skip (identity or bias-free projection)."""

    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    proj_w: Tensor | None  # None: identity skip (cin == cout)
    skip: bool = True  # False: plain shared MLP (ablation)

    def named(self, prefix: str):
        yield f"{prefix}.fc1.w", self.fc1_w
        yield f"{prefix}.fc1.b", self.fc1_b
        yield f"{prefix}.fc2.w", self.fc2_w
        yield f"{prefix}.fc2.b", self.fc2_b
        if self.proj_w is not None:
            yield f"{prefix}.proj.w", self.proj_w


def init_residual(
    rng: np.random.Generator, cin: int, cout: int, residual: bool = True
) -> ResidualParams:
    # hidden width equals cout, keeping the block lightweight
    fc1_w, fc1_b = linear_params(rng, cin, cout)
    fc2_w, fc2_b = linear_params(rng, cout, cout)
    proj_w = None
    if residual and cin != cout:
        proj_w, _ = linear_params(rng, cin, cout, bias=False)
    return ResidualParams(fc1_w, fc1_b, fc2_w, fc2_b, proj_w, skip=residual)


def residual_block(x: Tensor, prm: ResidualParams) -> Tensor:
    y = T.linear(T.relu(T.linear(x, prm.fc1_w, prm.fc1_b)), prm.fc2_w, prm.fc2_b)
    if not prm.skip:
        return y
    return T.add(y, x if prm.proj_w is None else T.linear(x, prm.proj_w))


@dataclass
class FusionWeights:
    """One learnable scalar per fused input; effective weights are relu(w)."""

    w: Tensor
    eps: float = 1e-4

    def named(self, prefix: str):
        yield f"{prefix}.w", self.w


def init_fusion(num_inputs: int, eps: float) -> FusionWeights:
    # uniform importance at the start
    return FusionWeights(Tensor(np.ones(num_inputs), requires_grad=True), eps=eps)


def fuse(inputs: list[Tensor], fw: FusionWeights) -> Tensor:
    """out = sum_i relu(w_i) * x_i / (sum_i relu(w_i) + eps)."""
    n = fw.w.data.shape[0]
    if len(inputs) != n:
        raise ValueError(f"fuse: {len(inputs)} inputs but {n} weights")
    shape = inputs[0].data.shape
    for x in inputs[1:]:
        if x.data.shape != shape:
            raise ValueError(f"fuse: input shape mismatch {x.data.shape} vs {shape}")
    acts = [T.relu(T.select(fw.w, i)) for i in range(n)]
    den = acts[0]
    for a in acts[1:]:
        den = T.add(den, a)
    den = T.add(den, constant(np.asarray(fw.eps)))
    num = T.smul(inputs[0], acts[0])
    for x, a in zip(inputs[1:], acts[1:]):
        num = T.add(num, T.smul(x, a))
    return T.sdiv(num, den)


@dataclass
class UpOpParams:
    block: ResidualParams

    def named(self, prefix: str):
        yield from self.block.named(prefix)


@dataclass
class DownOpParams:
    block: ResidualParams

    def named(self, prefix: str):
        yield from self.block.named(prefix)


def up_operator(feats: Tensor, prm: UpOpParams) -> Tensor:
    """[M, C] -> [2M, C]: duplicate rows, mark the two children of each parent
    with a -1/+1 grid code channel, and mix through a residual block."""
    doubled = T.repeat_rows(feats, 2)
    m2 = doubled.data.shape[0]
    grid = constant(np.tile([[-1.0], [1.0]], (m2 // 2, 1)))
    return residual_block(T.concat_channels(doubled, grid), prm.block)


def down_operator(feats: Tensor, prm: DownOpParams) -> Tensor:
    """[2M, C] -> [M, C]: regroup each child pair into channels, then squeeze
    back through a residual block; pairing matches up_operator's layout."""
    if feats.data.shape[0] % 2:
        raise ValueError(f"down_operator: odd leading extent {feats.data.shape[0]}")
    return residual_block(T.group_channels(feats, 2), prm.block)


@dataclass
class PyramidParams:
    entry: ResidualParams
    left_ups: list[UpOpParams]  # producing level l = index + 1
    downs: list[DownOpParams]  # producing level = index (from level + 1)
    right_ups: list[UpOpParams]  # producing level = index + 1
    mid_fuse: list[FusionWeights] = field(default_factory=list)  # level = index
    right_fuse: list[FusionWeights] = field(default_factory=list)  # level = index + 1
    levels: int = 1
    fusion: bool = True

    def named(self, prefix: str = "pyramid"):
        yield from self.entry.named(f"{prefix}.entry")
        for i, up in enumerate(self.left_ups, start=1):
            yield from up.named(f"{prefix}.left_up{i}")
        for i, dn in enumerate(self.downs):
            yield from dn.named(f"{prefix}.down{i}")
        for i, up in enumerate(self.right_ups, start=1):
            yield from up.named(f"{prefix}.right_up{i}")
        for i, fw in enumerate(self.mid_fuse):
            yield from fw.named(f"{prefix}.mid_fuse{i}")
        for i, fw in enumerate(self.right_fuse, start=1):
            yield from fw.named(f"{prefix}.right_fuse{i}")


def init_pyramid(
    rng: np.random.Generator,
    c1: int,
    c2: int,
    levels: int,
    fusion: bool = True,
    residual: bool = True,
    eps: float = 1e-4,
) -> PyramidParams:
    if levels < 1:
        raise ValueError(f"init_pyramid: levels must be >= 1, got {levels}")
    entry = init_residual(rng, c1, c2, residual)
    left = [UpOpParams(init_residual(rng, c2 + 1, c2, residual)) for _ in range(levels)]
    if not fusion:
        return PyramidParams(entry, left, [], [], levels=levels, fusion=False)
    downs = [DownOpParams(init_residual(rng, 2 * c2, c2, residual)) for _ in range(levels)]
    right = [UpOpParams(init_residual(rng, c2 + 1, c2, residual)) for _ in range(levels)]
    mid_fuse = [init_fusion(2, eps) for _ in range(levels)]
    right_fuse = [init_fusion(3 if lvl < levels else 2, eps) for lvl in range(1, levels + 1)]
    return PyramidParams(entry, left, downs, right, mid_fuse, right_fuse, levels, True)


def expand(feats: Tensor, prm: PyramidParams) -> list[Tensor]:
    """[N, C1] -> L feature sets of shapes [2^l * N, C2], l = 1..L."""
    lvl = prm.levels
    left = [residual_block(feats, prm.entry)]  # level 0
    for l in range(1, lvl + 1):
        left.append(up_operator(left[-1], prm.left_ups[l - 1]))
    if not prm.fusion:  # ablation: left pathway only
        return left[1:]

    # middle pathway, top-down; level L-1 fuses the downsampled top of the
    # left pathway, every level below fuses the downsampled middle feature
    mid: list[Tensor | None] = [None] * lvl
    mid[lvl - 1] = fuse(
        [left[lvl - 1], down_operator(left[lvl], prm.downs[lvl - 1])],
        prm.mid_fuse[lvl - 1],
    )
    for l in range(lvl - 2, -1, -1):
        mid[l] = fuse(
            [left[l], down_operator(mid[l + 1], prm.downs[l])], prm.mid_fuse[l]
        )

    # right pathway, bottom-up, seeded by the fully fused level-0 feature
    right = [mid[0]]
    for l in range(1, lvl):
        right.append(
            fuse(
                [left[l], mid[l], up_operator(right[l - 1], prm.right_ups[l - 1])],
                prm.right_fuse[l - 1],
            )
        )
    right.append(
        fuse(
            [left[lvl], up_operator(right[lvl - 1], prm.right_ups[lvl - 1])],
            prm.right_fuse[lvl - 1],
        )
    )
    return right[1:]
