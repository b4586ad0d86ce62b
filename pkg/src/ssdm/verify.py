"""Verification suites shared by the CLI gates and the acceptance tests.

Each suite returns plain result rows so callers can print tables or assert.
The naive attention reference here is written with explicit Python loops and
shares no code with :mod:`ssdm.smm`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ssdm import diffcore as dc
from ssdm.diffcore import Tensor, grad_check
from ssdm.prior import (
    StructuralPrior,
    directional_affinities,
    init_adapter,
    materialize_full_affinity,
    project_embedding,
    resize_geometry_map,
    stage_prior,
)
from ssdm.segnet import ModelConfig, SegNet, Variant
from ssdm.semm import encode_semantic, init_semm, inject_semantic
from ssdm.smm import col_attention, init_smm, row_attention, smm_forward


@dataclass
class CheckRow:
    name: str
    instances: int
    worst: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


# -- gradient checks ---------------------------------------------------------------

def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _dims(rng, lo=1, hi=4, n=3):
    return [int(v) for v in rng.integers(lo, hi + 1, n)]


def _wsum(out: Tensor, weights: np.ndarray) -> Tensor:
    return dc.sum_all(dc.mul(out, Tensor(weights, dtype=np.float64)))


def _unary(fn, shape_fn=None):
    def make(rng):
        shape = shape_fn(rng) if shape_fn else _dims(rng)
        x = _t(rng, *shape)
        out_shape = fn(x).shape
        r = rng.standard_normal(out_shape)
        return (lambda: _wsum(fn(x), r)), {"x": x}
    return make


def _binary(fn, shapes_fn):
    def make(rng):
        sa, sb = shapes_fn(rng)
        a, b = _t(rng, *sa), _t(rng, *sb)
        r = rng.standard_normal(fn(a, b).shape)
        return (lambda: _wsum(fn(a, b), r)), {"a": a, "b": b}
    return make


def _same(rng):
    s = _dims(rng)
    return s, s


def _case_mul_scalar(rng):
    x = _t(rng, *_dims(rng))
    s = Tensor([rng.standard_normal()], requires_grad=True, dtype=np.float64)
    r = rng.standard_normal(x.shape)
    return (lambda: _wsum(dc.mul_scalar(x, s), r)), {"x": x, "s": s}


def _case_scale(rng):
    c = float(rng.standard_normal())
    return _unary(lambda x: dc.scale(x, c))(rng)


def _case_expand(rng):
    n = int(rng.integers(1, 4))
    return _unary(lambda x: dc.expand_leading(x, n))(rng)


def _case_reshape(rng):
    a, b, c = _dims(rng)
    return _unary(lambda x: dc.reshape(x, (c, a * b)), lambda _: (a, b, c))(rng)


def _case_permute(rng):
    perm = tuple(int(v) for v in rng.permutation(3))
    return _unary(lambda x: dc.permute(x, perm))(rng)


def _case_matmul(rng):
    b, m, k, n = _dims(rng, n=4)
    return _binary(dc.matmul, lambda _: ((b, m, k), (b, k, n)))(rng)


def _case_pair_inner(rng):
    c, n, p, q = _dims(rng, n=4)
    return _binary(dc.pair_inner, lambda _: ((c, n, p), (c, n, q)))(rng)


def _case_concat(rng):
    c1, c2, h, w = _dims(rng, n=4)
    return _binary(dc.concat_channels, lambda _: ((c1, h, w), (c2, h, w)))(rng)


def _case_l2(rng):
    return _unary(dc.l2_normalize_channels)(rng)


def _case_conv(stride: int, k: int):
    def make(rng):
        c, o = _dims(rng, 1, 3, 2)
        h, w = _dims(rng, 3, 6, 2)
        x, wt, b = _t(rng, c, h, w), _t(rng, o, c, k, k), _t(rng, o)
        r = rng.standard_normal(dc.conv2d(x, wt, b, stride).shape)
        return (lambda: _wsum(dc.conv2d(x, wt, b, stride), r)), {"x": x, "w": wt, "b": b}
    return make


def _case_resize(rng):
    c, h, w = _dims(rng, 1, 5)
    ho, wo = _dims(rng, 1, 8, 2)
    return _unary(lambda x: dc.resize_bilinear(x, ho, wo), lambda _: (c, h, w))(rng)


def _case_cross_entropy(rng):
    k, h, w = _dims(rng, 2, 4)
    x = _t(rng, k, h, w)
    labels = rng.integers(0, k, (h, w)).astype(np.uint8)
    labels.reshape(-1)[0] = 255
    if h * w == 1:
        labels[...] = 0
    return (lambda: dc.cross_entropy(x, labels)), {"logits": x}


def _qkv(rng):
    heads, dh, hh, ww = int(rng.integers(1, 3)), *_dims(rng, 1, 4)
    return heads, dh, hh, ww, _t(rng, heads, dh, hh, ww), _t(rng, heads, dh, hh, ww), _t(rng, heads, dh, hh, ww)


def _case_row(rng):
    _, _, hh, ww, q, k, v = _qkv(rng)
    g = _t(rng, hh * ww, ww)
    r = rng.standard_normal(v.shape)
    return (lambda: _wsum(row_attention(q, k, v, g), r)), {"q": q, "k": k, "v": v, "gx": g}


def _case_col(rng):
    _, _, hh, ww, q, k, v = _qkv(rng)
    g = _t(rng, hh * ww, hh)
    r = rng.standard_normal(v.shape)
    return (lambda: _wsum(col_attention(q, k, v, g), r)), {"q": q, "k": k, "v": v, "gy": g}


def _case_affinity(rng):
    c_e, d_g = _dims(rng, 2, 5, 2)
    he, we = _dims(rng, 1, 3, 2)
    ho, wo = _dims(rng, 2, 5, 2)
    e = _t(rng, c_e, he, we)
    w = init_adapter(c_e, d_g, 1, seed=int(rng.integers(1000)), dtype=np.float64)
    w.log_tau[0].data[:] = rng.uniform(-0.5, 0.5)
    rx, ry = rng.standard_normal((ho * wo, wo)), rng.standard_normal((ho * wo, ho))

    def loss():
        geo = resize_geometry_map(project_embedding(e, w), ho, wo)
        gx, gy = directional_affinities(geo, w.tau(0))
        return dc.add(_wsum(gx, rx), _wsum(gy, ry))

    return loss, {"e": e, **w.named()}


def _case_smm(rng):
    seed = int(rng.integers(1000))
    c = 2 * int(rng.integers(1, 4))
    hh, ww = _dims(rng, 2, 5, 2)
    f = _t(rng, c, hh, ww)
    w = init_smm(c, seed, "smm", heads=2, dtype=np.float64, zero_init=False)
    ad = init_adapter(3, 3, 1, seed=seed, dtype=np.float64)
    e = _t(rng, 3, 2, 2)
    r = rng.standard_normal((c, hh, ww))

    def loss():
        prior = stage_prior(project_embedding(e, ad), 0, (hh, ww), ad)
        return _wsum(smm_forward(f, prior, w), r)

    return loss, {"f": f, "e": e, **w.named("smm"), **ad.named()}


def _case_encode_semantic(rng):
    c_e, width = _dims(rng, 1, 3, 2)
    h, w_ = _dims(rng, 1, 4, 2)
    wts = init_semm(c_e, 2, int(rng.integers(1000)), width=width, dtype=np.float64)
    e = _t(rng, c_e, h, w_)
    r = rng.standard_normal((width, h, w_))
    params = {"e": e, **{k: p for k, p in wts.named().items() if ".enc" in k}}
    return (lambda: _wsum(encode_semantic(e, wts), r)), params


def _case_inject_semantic(rng):
    c_e, c_m, width = _dims(rng, 1, 3)
    he, we = _dims(rng, 1, 3, 2)
    hm, wm = _dims(rng, 2, 6, 2)
    wts = init_semm(c_e, c_m, int(rng.integers(1000)), width=width, dtype=np.float64, zero_init=False)
    e, m = _t(rng, c_e, he, we), _t(rng, c_m, hm, wm)
    r = rng.standard_normal((c_m, hm, wm))
    return (lambda: _wsum(inject_semantic(m, encode_semantic(e, wts), wts), r)), {"m": m, "e": e, **wts.named()}


# name -> (instance factory, coordinates sampled per parameter; None checks all)
GRAD_CASES: dict[str, tuple[Callable, int | None]] = {
    "add": (_binary(dc.add, _same), None),
    "sub": (_binary(dc.sub, _same), None),
    "mul": (_binary(dc.mul, _same), None),
    "scale": (_case_scale, None),
    "mul_scalar": (_case_mul_scalar, None),
    "exp": (_unary(dc.exp), None),
    "gelu": (_unary(dc.gelu), None),
    "sum_all": (_unary(lambda x: dc.reshape(dc.sum_all(x), (1,))), None),
    "reshape": (_case_reshape, None),
    "permute": (_case_permute, None),
    "expand_leading": (_case_expand, None),
    "concat_channels": (_case_concat, None),
    "matmul": (_case_matmul, None),
    "pair_inner": (_case_pair_inner, None),
    "softmax_lastdim": (_unary(dc.softmax_lastdim), None),
    "l2_normalize_channels": (_case_l2, None),
    "conv2d_3x3": (_case_conv(1, 3), None),
    "conv2d_3x3_stride2": (_case_conv(2, 3), None),
    "conv2d_1x1": (_case_conv(1, 1), None),
    "resize_bilinear": (_case_resize, None),
    "cross_entropy": (_case_cross_entropy, None),
    "row_attention": (_case_row, None),
    "col_attention": (_case_col, None),
    "prior_affinities": (_case_affinity, None),
    "encode_semantic": (_case_encode_semantic, 8),
    "block:smm_forward": (_case_smm, 6),
    "block:inject_semantic": (_case_inject_semantic, 8),
}


def gradcheck_suite(n_seeds: int = 20, tol: float = 1e-4, eps: float = 1e-5,
                    names: list[str] | None = None) -> list[CheckRow]:
    rows = []
    for name in names or list(GRAD_CASES):
        make, coords = GRAD_CASES[name]
        worst = 0.0
        for seed in range(n_seeds):
            rng = np.random.default_rng([seed, sum(map(ord, name))])
            f, params = make(rng)
            rep = grad_check(f, params, eps=eps, tol=tol, max_coords=coords, seed=seed)
            worst = max(worst, rep.max_rel_err)
        rows.append(CheckRow(name, n_seeds, worst, tol))
    return rows


# -- oracles -------------------------------------------------------------------------

def naive_decomposed_attention(q, k, v, gx, gy):
    """Row then column biased attention with explicit loops over pixels and keys.

    ``q, k, v`` are heads × d_h × H × W arrays; ``gx`` is (HW)×W, ``gy`` (HW)×H.
    The column pass attends over the row pass's output, reusing q and k.
    """
    heads, dh, hh, ww = q.shape

    def one_pass(vals, along_row):
        out = np.zeros_like(vals)
        for h in range(heads):
            for i in range(hh):
                for j in range(ww):
                    p = i * ww + j
                    keys = [(i, jj) for jj in range(ww)] if along_row else [(ii, j) for ii in range(hh)]
                    bias = gx if along_row else gy
                    logits = []
                    for n, (a, b) in enumerate(keys):
                        dot = 0.0
                        for c in range(dh):
                            dot += q[h, c, i, j] * k[h, c, a, b]
                        logits.append(dot / math.sqrt(dh) + bias[p, n])
                    top = max(logits)
                    e = [math.exp(z - top) for z in logits]
                    s = sum(e)
                    for c in range(dh):
                        acc = 0.0
                        for n, (a, b) in enumerate(keys):
                            acc += e[n] / s * vals[h, c, a, b]
                        out[h, c, i, j] = acc
        return out

    return one_pass(one_pass(v, True), False)


def attention_oracle(max_side: int = 6, heads: int = 2, head_dim: int = 3, seed: int = 0) -> CheckRow:
    worst = 0.0
    n = 0
    for hh in range(1, max_side + 1):
        for ww in range(1, max_side + 1):
            rng = np.random.default_rng([seed, hh, ww])
            q, k, v = (rng.standard_normal((heads, head_dim, hh, ww)) for _ in range(3))
            gx = rng.standard_normal((hh * ww, ww))
            gy = rng.standard_normal((hh * ww, hh))
            fast = col_attention(Tensor(q), Tensor(k), row_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(gx)),
                                 Tensor(gy)).data
            worst = max(worst, float(np.abs(fast - naive_decomposed_attention(q, k, v, gx, gy)).max()))
            n += 1
    return CheckRow("decomposed_vs_naive_attention", n, worst, 1e-6)


def _slices(full: np.ndarray, hh: int, ww: int) -> tuple[np.ndarray, np.ndarray]:
    gx = np.stack([full[i * ww + j, i * ww:(i + 1) * ww] for i in range(hh) for j in range(ww)])
    gy = np.stack([full[i * ww + j, j::ww] for i in range(hh) for j in range(ww)])
    return gx, gy


def slice_oracle(n_seeds: int = 50, max_side: int = 8) -> CheckRow:
    """Directional affinities against slices of the materialized matrix; 0 means bit-identical."""
    mismatches = 0
    for seed in range(n_seeds):
        rng = np.random.default_rng([seed, 7])
        d = int(rng.integers(1, 9))
        hh, ww = (int(v) for v in rng.integers(1, max_side + 1, 2))
        g = rng.standard_normal((d, hh, ww))
        g /= np.linalg.norm(g, axis=0, keepdims=True)
        tau = Tensor([float(np.exp(rng.uniform(-1, 2)))])
        gx, gy = directional_affinities(Tensor(g), tau)
        ex, ey = _slices(materialize_full_affinity(Tensor(g), tau).data, hh, ww)
        mismatches += int(not (np.array_equal(gx.data, ex) and np.array_equal(gy.data, ey)))
    return CheckRow("directional_vs_materialized_slices", n_seeds, float(mismatches), 0.0)


def identity_oracle(n_inputs: int = 10, zero_init: bool = True, cfg: ModelConfig | None = None) -> CheckRow:
    """Count of inputs whose Full logits differ from Baseline logits (bitwise) at initialization."""
    cfg = cfg or ModelConfig()
    base = SegNet(ModelConfig(**{**cfg.to_dict(), "variant": Variant.Baseline}))
    full = SegNet(ModelConfig(**{**cfg.to_dict(), "variant": Variant.Full, "zero_init": zero_init}))
    h, w = cfg.input_size
    he, we = h // 8, w // 8
    differ = 0
    for i in range(n_inputs):
        rng = np.random.default_rng([i, 11])
        img = rng.random((3, h, w)).astype(cfg.np_dtype)
        emb = rng.standard_normal((cfg.embed_channels, he, we)).astype(cfg.np_dtype)
        a = base.forward(img).data
        b = full.forward(img, emb).data
        differ += int(a.tobytes() != b.tobytes())
    name = "identity_at_init" if zero_init else "identity_at_init_negative_control"
    return CheckRow(name, n_inputs, float(differ), 0.0)


def shift_invariance_oracle(n_seeds: int = 10) -> CheckRow:
    """Per-query constants added to the directional priors leave the SMM output unchanged."""
    worst = 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng([seed, 13])
        c = 2 * int(rng.integers(2, 6))
        hh, ww = (int(v) for v in rng.integers(1, 9, 2))
        w = init_smm(c, seed, "smm", heads=2, dtype=np.float64, zero_init=False)
        g = rng.standard_normal((4, hh, ww))
        g /= np.linalg.norm(g, axis=0, keepdims=True)
        tau = Tensor([1.5])
        gx, gy = directional_affinities(Tensor(g), tau)
        shifted = StructuralPrior(0, Tensor(g),
                                  Tensor(gx.data + 10 * rng.standard_normal((hh * ww, 1))),
                                  Tensor(gy.data + 10 * rng.standard_normal((hh * ww, 1))), tau)
        f = Tensor(rng.standard_normal((c, hh, ww)))
        a = smm_forward(f, StructuralPrior(0, Tensor(g), gx, gy, tau), w).data
        b = smm_forward(f, shifted, w).data
        worst = max(worst, float(np.abs(a - b).max()))
    return CheckRow("prior_shift_invariance", n_seeds, worst, 1e-6)


def oracle_suite() -> list[CheckRow]:
    neg = identity_oracle(zero_init=False)
    # the negative control passes when every input differs
    neg = CheckRow(neg.name, neg.instances, float(neg.instances - neg.worst), 0.0)
    return [attention_oracle(), slice_oracle(), identity_oracle(), neg, shift_invariance_oracle()]

