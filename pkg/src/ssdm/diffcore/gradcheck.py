"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ssdm.diffcore.rng import Rng
from ssdm.diffcore.tensor import Tensor, no_grad

# below this magnitude the relative error is measured against this floor instead
REL_FLOOR = 1e-5
# a central difference can only resolve multiples of ulp(f) / (2 eps); gradients
# within this many such quanta of zero are compared against the quantum floor
RESOLUTION_QUANTA = 1e5


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    worst: tuple[str, int] | None
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def relative_error(analytic: float, numeric: float, floor: float = REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def difference_floor(f_value: float, eps: float) -> float:
    return max(REL_FLOOR, RESOLUTION_QUANTA * float(np.spacing(abs(f_value))) / (2 * eps))


def grad_check(
    f: Callable[[], Tensor],
    params: Tensor | Sequence[Tensor] | Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` gradients of the scalar ``f()`` with central differences.

    ``f`` closes over ``params`` and must rebuild its graph on every call.
    With ``max_coords`` set, that many coordinates per parameter are sampled
    (seeded) instead of checking all of them.
    """
    if isinstance(params, Tensor):
        named = {"theta": params}
    elif isinstance(params, Mapping):
        named = dict(params)
    else:
        named = {f"p{i}": p for i, p in enumerate(params)}
    for p in named.values():
        p.requires_grad = True
        p.grad = None

    out = f()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise FloatingPointError(f"grad_check: f(theta) is not finite ({out.item()})")
    out.backward()
    floor = difference_floor(out.item(), eps)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()}

    rng = Rng(seed, "gradcheck")
    worst_err, worst_at, n_checked = 0.0, None, 0
    per_param: dict[str, float] = {}
    for name, p in named.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords))
        a_flat = analytic[name].reshape(-1)
        pmax = 0.0
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: non-finite f at {name}[{i}]")
            err = relative_error(float(a_flat[i]), (fp - fm) / (2 * eps), floor)
            n_checked += 1
            pmax = max(pmax, err)
            if worst_at is None or err > worst_err:
                worst_err, worst_at = err, (name, int(i))
        per_param[name] = pmax
    return GradCheckReport(worst_err, n_checked, worst_at, tol, per_param)
