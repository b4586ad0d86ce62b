"""Structural priors from a coarse geospatial embedding grid.

The embedding is projected by a shared 1×1 adapter, normalized per pixel, and
resized to each encoder stage. Directional affinities are temperature-scaled
inner products between pixels on the same row (``gx``) or column (``gy``);
the full HW×HW affinity is only built by :func:`materialize_full_affinity`,
which exists as a test oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ssdm.diffcore import (
    Rng,
    Tensor,
    conv2d,
    exp,
    l2_normalize_channels,
    mul_scalar,
    pair_inner,
    permute,
    reshape,
    resize_bilinear,
)
from ssdm.errors import DimensionError, ValidationError

MAX_FULL_AFFINITY_PIXELS = 4096


@dataclass
class GeoEmbedding:
    values: np.ndarray  # C_e × H_e × W_e
    tile_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[0] < 1:
            raise ValidationError(f"embedding must be C×H×W with C >= 1, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValidationError("embedding contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def tensor(self, dtype=np.float32) -> Tensor:
        return Tensor(self.values.astype(dtype))


@dataclass
class GeoAdapterWeights:
    proj_w: Tensor  # d_g × C_e × 1 × 1
    proj_b: Tensor
    log_tau: list[Tensor] = field(default_factory=list)  # one per stage, tau = exp(log_tau)

    def tau(self, stage: int) -> Tensor:
        return exp(self.log_tau[stage])

    def named(self, prefix: str = "adapter") -> dict[str, Tensor]:
        out = {f"{prefix}.proj_w": self.proj_w, f"{prefix}.proj_b": self.proj_b}
        for i, t in enumerate(self.log_tau):
            out[f"{prefix}.log_tau{i}"] = t
        return out


def init_adapter(c_e: int, d_g: int, n_stages: int, seed: int, dtype=np.float32, prefix: str = "adapter",
                 tau_init: float = 1.0) -> GeoAdapterWeights:
    w = Rng(seed, f"{prefix}.proj_w").normal((d_g, c_e, 1, 1), std=np.sqrt(1.0 / c_e), dtype=dtype)
    return GeoAdapterWeights(
        proj_w=Tensor(w, requires_grad=True),
        proj_b=Tensor(np.zeros(d_g, dtype=dtype), requires_grad=True),
        log_tau=[Tensor(np.full(1, np.log(tau_init), dtype=dtype), requires_grad=True) for _ in range(n_stages)],
    )


@dataclass
class StructuralPrior:
    stage: int
    geometry: Tensor  # d_g × H_l × W_l, unit-norm pixels
    gx: Tensor  # (H_l·W_l) × W_l
    gy: Tensor  # (H_l·W_l) × H_l
    tau: Tensor

    @property
    def size(self) -> tuple[int, int]:
        return self.geometry.shape[1], self.geometry.shape[2]


def project_embedding(emb: Tensor, w: GeoAdapterWeights) -> Tensor:
    if emb.shape[0] != w.proj_w.shape[1]:
        raise DimensionError(
            f"embedding has {emb.shape[0]} channels, adapter expects {w.proj_w.shape[1]}"
        )
    return l2_normalize_channels(conv2d(emb, w.proj_w, w.proj_b))


def resize_geometry_map(p: Tensor, h: int, w: int) -> Tensor:
    return l2_normalize_channels(resize_bilinear(p, h, w))


def directional_affinities(geo: Tensor, tau: Tensor) -> tuple[Tensor, Tensor]:
    """Same-row and same-column slices of the pairwise affinity.

    ``gx[(i, j), j'] = tau * <geo[:, i, j], geo[:, i, j']>`` and
    ``gy[(i, j), i'] = tau * <geo[:, i, j], geo[:, i', j]>``.
    """
    _, h, w = geo.shape
    rows = pair_inner(geo, geo)  # (H, W, W)
    gx = mul_scalar(reshape(rows, (h * w, w)), tau)
    by_col = permute(geo, (0, 2, 1))  # d × W × H
    cols = permute(pair_inner(by_col, by_col), (1, 0, 2))  # (H, W, H)
    gy = mul_scalar(reshape(cols, (h * w, h)), tau)
    return gx, gy


def materialize_full_affinity(geo: Tensor, tau: Tensor) -> Tensor:
    d, h, w = geo.shape
    if h * w > MAX_FULL_AFFINITY_PIXELS:
        raise ValidationError(
            f"full affinity of a {h}×{w} grid needs {(h * w) ** 2} entries; limit is {MAX_FULL_AFFINITY_PIXELS} pixels"
        )
    flat = reshape(geo, (d, 1, h * w))
    return mul_scalar(reshape(pair_inner(flat, flat), (h * w, h * w)), tau)


def stage_prior(projected: Tensor, stage: int, size: tuple[int, int], w: GeoAdapterWeights) -> StructuralPrior:
    geo = resize_geometry_map(projected, *size)
    tau = w.tau(stage)
    gx, gy = directional_affinities(geo, tau)
    return StructuralPrior(stage, geo, gx, gy, tau)


def build_priors(emb: Tensor, w: GeoAdapterWeights, sizes: list[tuple[int, int]]) -> list[StructuralPrior]:
    projected = project_embedding(emb, w)
    return [stage_prior(projected, i, s, w) for i, s in enumerate(sizes)]
