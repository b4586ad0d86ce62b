import numpy as np
import pytest

from ssdm.diffcore import Tensor


def rand_tensor(rng: np.random.Generator, *shape, scale: float = 1.0, grad: bool = True) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=grad, dtype=np.float64)


def weighted_sum_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    """sum(out * R) for a fixed random R: a scalar whose gradient exercises every output entry."""
    from ssdm.diffcore import mul, sum_all

    return sum_all(mul(out, Tensor(weights, dtype=np.float64)))


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
