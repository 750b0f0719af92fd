"""Per-point feature extraction by densely connected dynamic edge convolutions.

An entry shared MLP lifts raw coordinates to c0 channels; each of the
following units recomputes a kNN graph in its own input feature space,
builds (neighbor - center, center) edge features, pushes them through two
shared MLP layers with a dense skip, and max-pools over neighbors into g
new channels. Units consume the concatenation of everything before them,
so the final width is c0 + num_units * g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from . import tensor as T
from .params import linear_params
from .tensor import Tensor


@dataclass
class UnitParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ExtractorParams:
    entry_w: Tensor
    entry_b: Tensor
    units: list[UnitParams]
    c0: int
    g: int

    @property
    def out_channels(self) -> int:
        return self.c0 + len(self.units) * self.g

    def named(self, prefix: str = "extractor"):
        yield f"{prefix}.entry.w", self.entry_w
        yield f"{prefix}.entry.b", self.entry_b
        for i, u in enumerate(self.units, start=1):
            yield f"{prefix}.unit{i}.fc1.w", u.w1
            yield f"{prefix}.unit{i}.fc1.b", u.b1
            yield f"{prefix}.unit{i}.fc2.w", u.w2
            yield f"{prefix}.unit{i}.fc2.b", u.b2


def init_extractor(
    rng: np.random.Generator, c0: int, g: int, num_units: int
) -> ExtractorParams:
    if g % 2:
        raise ValueError(f"init_extractor: g must be even (two layers of g/2), got {g}")
    entry_w, entry_b = linear_params(rng, 3, c0)
    units = []
    for i in range(num_units):
        cin = c0 + i * g  # dense connectivity across units
        w1, b1 = linear_params(rng, 2 * cin, g // 2)
        w2, b2 = linear_params(rng, 2 * cin + g // 2, g // 2)
        units.append(UnitParams(w1, b1, w2, b2))
    return ExtractorParams(entry_w, entry_b, units, c0=c0, g=g)


def edge_features(feats: Tensor, idx) -> Tensor:
    """out[i, j, :] = concat(F[idx[i, j]] - F[i], F[i]) for each neighbor j."""
    k = np.asarray(idx).shape[1]
    gathered = T.gather_rows(feats, idx)
    center = T.tile_rows(feats, k)
    return T.concat_channels(T.sub(gathered, center), center)


def dense_edge_conv_unit(feats: Tensor, k: int, unit: UnitParams) -> Tensor:
    """One dynamic edge-conv unit: self-kNN in the current feature space,
    two edge MLP layers with a dense skip, max over neighbors."""
    n = feats.data.shape[0]
    if k > n:
        raise ValueError(f"dense_edge_conv_unit: k={k} exceeds {n} points")
    idx = geometry.knn(feats.data, feats.data, k)
    edges = edge_features(feats, idx)
    flat = T.reshape(edges, (n * k, edges.data.shape[2]))
    h1 = T.relu(T.linear(flat, unit.w1, unit.b1))
    h2 = T.relu(T.linear(T.concat_channels(flat, h1), unit.w2, unit.b2))
    both = T.concat_channels(h1, h2)
    return T.reduce_max_axis1(T.reshape(both, (n, k, both.data.shape[1])))


def extract_features(points: Tensor, prm: ExtractorParams, k: int) -> Tensor:
    """[N, 3] coordinates -> [N, c0 + num_units * g] point features."""
    n = points.data.shape[0]
    if n < k:
        raise ValueError(f"extract_features: need at least k={k} points, got {n}")
    feats = T.relu(T.linear(points, prm.entry_w, prm.entry_b))
    for unit in prm.units:
        feats = T.concat_channels(feats, dense_edge_conv_unit(feats, k, unit))
    return feats
