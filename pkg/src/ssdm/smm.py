"""Structural modulation: decomposed self-attention with additive directional bias.

Each encoder stage feature F is projected to a latent width d, split into
heads, and passed through row attention (biased by ``gx``) and then column
attention (biased by ``gy``) over the row output. An output projection and a
two-layer MLP produce the residual that is added back onto F. The MLP's last
layer starts at zero, so a freshly initialized block returns F unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ssdm.diffcore import (
    Rng,
    Tensor,
    add,
    conv2d,
    expand_leading,
    gelu,
    matmul,
    permute,
    reshape,
    scale,
    softmax_lastdim,
)
from ssdm.errors import DimensionError
from ssdm.prior import StructuralPrior


@dataclass
class SmmWeights:
    heads: int
    p_w: Tensor
    p_b: Tensor
    q_w: Tensor
    q_b: Tensor
    k_w: Tensor
    k_b: Tensor
    v_w: Tensor
    v_b: Tensor
    o_w: Tensor
    o_b: Tensor
    m1_w: Tensor
    m1_b: Tensor
    m2_w: Tensor
    m2_b: Tensor

    _names = ("p", "q", "k", "v", "o", "m1", "m2")

    @property
    def width(self) -> int:
        return self.p_w.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for n in self._names:
            out[f"{prefix}.{n}_w"] = getattr(self, f"{n}_w")
            out[f"{prefix}.{n}_b"] = getattr(self, f"{n}_b")
        return out


def latent_width(channels: int) -> int:
    return min(channels, 64)


def init_smm(channels: int, seed: int, prefix: str, heads: int = 2, width: int | None = None,
             dtype=np.float32, zero_init: bool = True) -> SmmWeights:
    d = latent_width(channels) if width is None else width
    if d % heads:
        raise DimensionError(f"latent width {d} is not divisible by {heads} heads")

    def conv(name, o, i):
        w = Rng(seed, f"{prefix}.{name}_w").normal((o, i, 1, 1), std=math.sqrt(1.0 / i), dtype=dtype)
        return Tensor(w, requires_grad=True), Tensor(np.zeros(o, dtype=dtype), requires_grad=True)

    p_w, p_b = conv("p", d, channels)
    q_w, q_b = conv("q", d, d)
    k_w, k_b = conv("k", d, d)
    v_w, v_b = conv("v", d, d)
    o_w, o_b = conv("o", d, d)
    m1_w, m1_b = conv("m1", 4 * d, d)
    m2_w, m2_b = conv("m2", channels, 4 * d)
    if zero_init:
        m2_w.data[...] = 0
    return SmmWeights(heads, p_w, p_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, m1_w, m1_b, m2_w, m2_b)


def _check_bias(name: str, bias: Tensor, expected: tuple[int, int]) -> None:
    if bias.shape != expected:
        raise DimensionError(f"{name}: bias has shape {bias.shape}, expected {expected}")


def row_attention(q: Tensor, k: Tensor, v: Tensor, gx: Tensor, return_attn: bool = False):
    """Attention within each row; inputs are heads × d_h × H × W, ``gx`` is (HW)×W."""
    h, dh, hh, ww = q.shape
    _check_bias("row_attention", gx, (hh * ww, ww))
    qr = permute(q, (0, 2, 3, 1))  # h, H, W, dh
    kt = permute(k, (0, 2, 1, 3))  # h, H, dh, W
    logits = scale(matmul(qr, kt), 1.0 / math.sqrt(dh))  # h, H, W, W'
    logits = add(logits, expand_leading(reshape(gx, (hh, ww, ww)), h))
    attn = softmax_lastdim(logits)
    out = matmul(attn, permute(v, (0, 2, 3, 1)))  # h, H, W, dh
    out = permute(out, (0, 3, 1, 2))
    return (out, attn) if return_attn else out


def col_attention(q: Tensor, k: Tensor, v: Tensor, gy: Tensor, return_attn: bool = False):
    """Attention within each column; ``gy`` is (HW)×H."""
    h, dh, hh, ww = q.shape
    _check_bias("col_attention", gy, (hh * ww, hh))
    qc = permute(q, (0, 3, 2, 1))  # h, W, H, dh
    kt = permute(k, (0, 3, 1, 2))  # h, W, dh, H
    logits = scale(matmul(qc, kt), 1.0 / math.sqrt(dh))  # h, W, H, H'
    bias = permute(reshape(gy, (hh, ww, hh)), (1, 0, 2))  # W, H, H'
    logits = add(logits, expand_leading(bias, h))
    attn = softmax_lastdim(logits)
    out = matmul(attn, permute(v, (0, 3, 2, 1)))  # h, W, H, dh
    out = permute(out, (0, 3, 2, 1))
    return (out, attn) if return_attn else out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    d, hh, ww = x.shape
    return reshape(x, (heads, d // heads, hh, ww))


def smm_forward(f: Tensor, prior: StructuralPrior, w: SmmWeights) -> Tensor:
    c, hh, ww = f.shape
    if prior.size != (hh, ww):
        raise DimensionError(f"prior resolution {prior.size} does not match feature {hh}×{ww}")
    x = conv2d(f, w.p_w, w.p_b)
    q = _split_heads(conv2d(x, w.q_w, w.q_b), w.heads)
    k = _split_heads(conv2d(x, w.k_w, w.k_b), w.heads)
    v = _split_heads(conv2d(x, w.v_w, w.v_b), w.heads)
    v_row = row_attention(q, k, v, prior.gx)
    x_t = col_attention(q, k, v_row, prior.gy)
    x_t = reshape(x_t, (w.width, hh, ww))
    o = conv2d(x_t, w.o_w, w.o_b)
    delta = conv2d(gelu(conv2d(o, w.m1_w, w.m1_b)), w.m2_w, w.m2_b)
    return add(f, delta)


def attention_macs(heads: int, head_dim: int, h: int, w: int) -> int:
    """Closed form for the multiply-adds of one biased row+column pass.

    Per head and pixel, a pass over L keys costs L·d_h (logits), L (bias
    add) and L·d_h (weighted sum): ``heads · HW · (H + W) · (2·d_h + 1)``.
    """
    return heads * h * w * (h + w) * (2 * head_dim + 1)


def full_attention_macs(heads: int, head_dim: int, h: int, w: int) -> int:
    return heads * (h * w) ** 2 * (2 * head_dim + 1)


def full_attention(q: Tensor, k: Tensor, v: Tensor, g: Tensor) -> Tensor:
    """Materialized HW×HW biased attention, used as the cost baseline."""
    h, dh, hh, ww = q.shape
    n = hh * ww
    _check_bias("full_attention", g, (n, n))
    qf = permute(reshape(q, (h, dh, n)), (0, 2, 1))
    kf = reshape(k, (h, dh, n))
    logits = add(scale(matmul(qf, kf), 1.0 / math.sqrt(dh)), expand_leading(g, h))
    out = matmul(softmax_lastdim(logits), permute(reshape(v, (h, dh, n)), (0, 2, 1)))
    return reshape(permute(out, (0, 2, 1)), (h, dh, hh, ww))
