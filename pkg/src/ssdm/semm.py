"""Semantic modulation: late residual injection of the raw embedding into mask features."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ssdm.diffcore import Rng, Tensor, add, concat_channels, conv2d, gelu, resize_bilinear
from ssdm.errors import DimensionError

SEM_WIDTH = 32


@dataclass
class SemmWeights:
    enc1_w: Tensor  # 32 × C_e × 3 × 3
    enc1_b: Tensor
    enc2_w: Tensor  # 32 × 32 × 3 × 3
    enc2_b: Tensor
    proj_w: Tensor  # C_M × (C_M + 32) × 1 × 1, zero at init
    proj_b: Tensor

    def named(self, prefix: str = "semm") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("enc1_w", "enc1_b", "enc2_w", "enc2_b", "proj_w", "proj_b")}


def init_semm(c_e: int, c_m: int, seed: int, width: int = SEM_WIDTH, dtype=np.float32,
              zero_init: bool = True, prefix: str = "semm") -> SemmWeights:
    def conv(name, o, i, k):
        w = Rng(seed, f"{prefix}.{name}_w").normal((o, i, k, k), std=math.sqrt(2.0 / (i * k * k)), dtype=dtype)
        return Tensor(w, requires_grad=True), Tensor(np.zeros(o, dtype=dtype), requires_grad=True)

    e1w, e1b = conv("enc1", width, c_e, 3)
    e2w, e2b = conv("enc2", width, width, 3)
    pw, pb = conv("proj", c_m, c_m + width, 1)
    if zero_init:
        pw.data[...] = 0
    return SemmWeights(e1w, e1b, e2w, e2b, pw, pb)


def encode_semantic(emb: Tensor, w: SemmWeights) -> Tensor:
    if emb.shape[0] != w.enc1_w.shape[1]:
        raise DimensionError(f"embedding has {emb.shape[0]} channels, semantic encoder expects {w.enc1_w.shape[1]}")
    return conv2d(gelu(conv2d(emb, w.enc1_w, w.enc1_b)), w.enc2_w, w.enc2_b)


def inject_semantic(m: Tensor, s: Tensor, w: SemmWeights) -> Tensor:
    """Return ``M + proj([M, resize(S)])``."""
    s_hat = resize_bilinear(s, m.shape[1], m.shape[2])
    return add(m, conv2d(concat_channels(m, s_hat), w.proj_w, w.proj_b))
