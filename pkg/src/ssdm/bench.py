"""Cost of decomposed row+column attention against materialized HW×HW attention."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ssdm.diffcore import Rng, Tensor, count_macs, no_grad
from ssdm.smm import attention_macs, col_attention, full_attention, full_attention_macs, row_attention


@dataclass
class AttentionCost:
    height: int
    width: int
    latent_width: int
    heads: int
    decomposed_macs: int
    decomposed_macs_closed_form: int
    full_macs: int
    full_macs_closed_form: int
    decomposed_seconds: float
    full_seconds: float

    @property
    def macs_match(self) -> bool:
        return (self.decomposed_macs == self.decomposed_macs_closed_form
                and self.full_macs == self.full_macs_closed_form)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["macs_match"] = self.macs_match
        return d


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_attention(h: int, w: int, width: int = 32, heads: int = 2, repeats: int = 3, seed: int = 0,
                    dtype=np.float32) -> AttentionCost:
    dh = width // heads
    rng = Rng(seed, f"bench:{h}x{w}")
    q, k, v = (Tensor(rng.normal((heads, dh, h, w), dtype=dtype)) for _ in range(3))
    gx = Tensor(rng.normal((h * w, w), dtype=dtype))
    gy = Tensor(rng.normal((h * w, h), dtype=dtype))
    g = Tensor(rng.normal((h * w, h * w), dtype=dtype))

    def decomposed():
        return col_attention(q, k, row_attention(q, k, v, gx), gy)

    def full():
        return full_attention(q, k, v, g)

    with no_grad():
        with count_macs() as dm:
            decomposed()
        with count_macs() as fm:
            full()
        t_dec = _best_of(decomposed, repeats)
        t_full = _best_of(full, repeats)
    return AttentionCost(h, w, width, heads, dm.total, attention_macs(heads, dh, h, w),
                         fm.total, full_attention_macs(heads, dh, h, w), t_dec, t_full)
