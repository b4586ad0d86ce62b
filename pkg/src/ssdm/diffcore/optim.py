from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ssdm.diffcore.tensor import Tensor
from ssdm.errors import ValidationError


@dataclass
class OptimState:
    learning_rate: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], state: OptimState, grads: Mapping[str, np.ndarray] | None = None) -> None:
    """One AdamW update (decoupled weight decay), applied in place.

    Gradients come from ``grads`` when given, otherwise from each ``param.grad``.
    """
    state.step += 1
    t = state.step
    lr, wd, b1, b2 = state.learning_rate, state.weight_decay, state.beta1, state.beta2
    bc1 = 1 - b1**t
    bc2 = 1 - b2**t
    for name, p in params.items():
        g = grads[name] if grads is not None and name in grads else p.grad
        if g is None:
            raise ValidationError(f"adamw_step: parameter {name!r} has no gradient")
        if g.shape != p.shape:
            raise ValidationError(f"adamw_step: gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if wd:
            p.data *= 1 - lr * wd
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
