"""Differentiable array operations.

Every op takes and returns :class:`Tensor` values and records an exact
backward rule. Shapes must agree explicitly; the only implicit expansion is
the per-channel bias of ``conv2d``.
"""
from __future__ import annotations

import contextlib
import math
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ssdm.diffcore.tensor import Tensor, make_result
from ssdm.errors import DimensionError, ValidationError


class MacCounter:
    """Multiply-adds executed by ``matmul`` and ``add`` inside a ``count_macs`` block."""

    def __init__(self) -> None:
        self.matmul = 0
        self.add = 0

    @property
    def total(self) -> int:
        return self.matmul + self.add


_counter: MacCounter | None = None


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    global _counter
    prev, _counter = _counter, MacCounter()
    try:
        yield _counter
    finally:
        _counter = prev


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    if _counter is not None:
        _counter.add += a.size
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def mul_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the single value held in ``s``."""
    if s.size != 1:
        raise DimensionError(f"mul_scalar: expected a one-element scalar, got shape {s.shape}")
    sv = s.data.reshape(()).astype(x.dtype)

    def backward(g):
        gs = np.asarray(np.sum(g * x.data), dtype=s.dtype).reshape(s.shape)
        return g * sv, gs

    return make_result(x.data * sv, (x, s), backward)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form."""
    v = x.data
    c = v.dtype.type(_GELU_C)
    k = v.dtype.type(0.044715)
    half = v.dtype.type(0.5)
    # tanh is exactly ±1 well before |v| = 20, so clipping only avoids cubic overflow
    vc = np.clip(v, -20, 20)
    inner = c * (vc + k * vc * vc * vc)
    t = np.tanh(inner)
    y = half * v * (1 + t)

    def backward(g):
        dinner = c * (1 + 3 * k * vc * vc)
        return (g * (half * (1 + t) + half * v * (1 - t * t) * dinner),)

    return make_result(y, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    y = np.asarray(np.sum(x.data), dtype=x.dtype)
    return make_result(y, (x,), lambda g: (np.full_like(x.data, g),))


# -- shape -----------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(np.transpose(x.data, axes))
    return make_result(y, (x,), lambda g: (np.transpose(g, inv),))


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``x`` along a new leading axis."""
    y = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return make_result(y, (x,), lambda g: (g.sum(axis=0),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two C×H×W tensors along the channel axis, ``a`` first."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    ca = a.shape[0]
    y = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=0)
    return make_result(y, (a, b), lambda g: (g[:ca], g[ca:]))


# -- linear algebra ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    if a.data.ndim < 2 or b.data.ndim != a.data.ndim:
        raise DimensionError(f"matmul: incompatible ranks {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    y = np.matmul(a.data, b.data)
    if _counter is not None:
        _counter.matmul += math.prod(a.shape) * b.shape[-1]

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return make_result(y, (a, b), backward)


def pair_inner(u: Tensor, v: Tensor) -> Tensor:
    """out[n, p, q] = sum_c u[c, n, p] * v[c, n, q].

    The channel sum is accumulated in a fixed sequential order with plain
    elementwise products, so an entry's value depends only on the two vectors
    involved and not on the batch layout. Slicing a large call and computing the
    slice directly give bit-identical results.
    """
    if u.data.ndim != 3 or v.data.ndim != 3 or u.shape[:2] != v.shape[:2]:
        raise DimensionError(f"pair_inner: incompatible {u.shape} and {v.shape}")
    ud, vd = u.data, v.data
    out = ud[0][:, :, None] * vd[0][:, None, :]
    for c in range(1, ud.shape[0]):
        out = out + ud[c][:, :, None] * vd[c][:, None, :]

    def backward(g):
        # g: (n, p, q)
        gu = np.einsum("npq,cnq->cnp", g, vd) if u.requires_grad else None
        gv = np.einsum("npq,cnp->cnq", g, ud) if v.requires_grad else None
        return gu, gv

    return make_result(out, (u, v), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.shape[-1] < 1:
        raise DimensionError("softmax_lastdim: empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (x,), backward)


def l2_normalize_channels(x: Tensor) -> Tensor:
    """Scale each pixel's channel vector (axis 0) to unit length; zero vectors stay zero."""
    n = np.sqrt(np.sum(x.data * x.data, axis=0, keepdims=True))
    safe = np.where(n > 0, n, 1).astype(x.dtype)
    y = x.data / safe

    def backward(g):
        proj = np.sum(g * y, axis=0, keepdims=True)
        gx = (g - y * proj) / safe
        return (np.where(n > 0, gx, 0).astype(x.dtype),)

    return make_result(y, (x,), backward)


# -- convolution and resampling -------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = xp.shape[0]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # (C, Ho, Wo, k, k) -> (C, k, k, Ho, Wo)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """2-D cross-correlation of a C×H×W input with O×C×k×k weights.

    Odd ``k`` only; zero padding of ``k // 2`` so stride 1 preserves the
    spatial size and stride ``s`` yields ``ceil(H / s)``.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: expected C×H×W input and O×C×k×k weights, got {x.shape}, {w.shape}")
    c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels but weights expect {ci} ({x.shape} vs {w.shape})")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {k}×{k2}")
    if b is not None and b.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {b.shape} does not match {o} output channels")
    if stride < 1:
        raise ValidationError(f"conv2d: stride must be positive, got {stride}")
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    w2 = w.data.reshape(o, c * k * k)
    if k == 1:
        cols = np.ascontiguousarray(x.data[:, ::stride, ::stride]).reshape(c, ho * wo)
    else:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
        cols = _im2col(xp, k, stride, ho, wo)
    y = w2 @ cols
    if b is not None:
        y += b.data[:, None]
    y = y.reshape(o, ho, wo)

    def backward(g):
        g2 = g.reshape(o, ho * wo)
        gw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        gb = g2.sum(axis=1) if (b is not None and b.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = w2.T @ g2
            if k == 1:
                gx = np.zeros_like(x.data)
                gx[:, ::stride, ::stride] = dcols.reshape(c, ho, wo)
            else:
                dcols = dcols.reshape(c, k, k, ho, wo)
                gxp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
                gx = gxp[:, pad:pad + h, pad:pad + wd]
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(y, parents, backward)


def _linear_weights(n_in: int, n_out: int):
    """Source indices and fractions for half-pixel (align_corners=False) sampling."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    i0, i1, frac = _linear_weights(n_in, n_out)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def _lerp_axis(a: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    i0, i1, frac = _linear_weights(a.shape[axis], n_out)
    shape = [1] * a.ndim
    shape[axis] = n_out
    f = frac.astype(a.dtype).reshape(shape)
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    # lerp form keeps constant inputs exactly constant
    return lo + f * (hi - lo)


def resize_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    """Bilinear resize of a C×H×W tensor with half-pixel centres (align_corners=False)."""
    if h_out < 1 or w_out < 1:
        raise ValidationError(f"resize_bilinear: target size must be positive, got {h_out}×{w_out}")
    if x.data.ndim != 3:
        raise DimensionError(f"resize_bilinear: expected C×H×W, got {x.shape}")
    _, h, w = x.shape
    if (h, w) == (h_out, w_out):
        return make_result(x.data.copy(), (x,), lambda g: (g,))
    y = _lerp_axis(_lerp_axis(x.data, 2, w_out), 1, h_out)
    ry = _interp_matrix(h, h_out).astype(x.dtype)
    rx = _interp_matrix(w, w_out).astype(x.dtype)

    def backward(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return make_result(y, (x,), backward)


# -- loss ------------------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Mean negative log-softmax over the non-ignored pixels of a K×H×W logit map."""
    if logits.data.ndim != 3:
        raise DimensionError(f"cross_entropy: expected K×H×W logits, got {logits.shape}")
    k = logits.shape[0]
    labels = np.asarray(labels)
    if labels.shape != logits.shape[1:]:
        raise DimensionError(f"cross_entropy: labels {labels.shape} vs logits {logits.shape}")
    lab = labels.astype(np.int64)
    valid = lab != ignore_index
    if np.any((lab[valid] < 0) | (lab[valid] >= k)):
        raise ValidationError(f"cross_entropy: labels must lie in [0, {k}) or equal {ignore_index}")
    n_valid = int(valid.sum())
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0))
    safe = np.where(valid, lab, 0)
    picked = np.take_along_axis(z, safe[None], axis=0)[0]
    nll = (lse - picked) * valid
    denom = max(n_valid, 1)
    loss = np.asarray(nll.sum() / denom, dtype=logits.dtype)

    def backward(g):
        p = np.exp(z - lse[None])
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[None], 1, axis=0)
        return ((p - onehot) * valid[None] * (g / denom),)

    return make_result(loss, (logits,), backward)
