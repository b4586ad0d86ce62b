from ssdm.diffcore.gradcheck import GradCheckReport, grad_check
from ssdm.diffcore.ops import (
    add,
    concat_channels,
    MacCounter,
    conv2d,
    count_macs,
    cross_entropy,
    exp,
    expand_leading,
    gelu,
    l2_normalize_channels,
    matmul,
    mul,
    mul_scalar,
    pair_inner,
    permute,
    reshape,
    resize_bilinear,
    scale,
    softmax_lastdim,
    sub,
    sum_all,
)
from ssdm.diffcore.optim import OptimState, adamw_step
from ssdm.diffcore.rng import Rng
from ssdm.diffcore.tensor import Tensor, no_grad

__all__ = [
    "GradCheckReport",
    "OptimState",
    "Rng",
    "Tensor",
    "add",
    "adamw_step",
    "concat_channels",
    "MacCounter",
    "conv2d",
    "count_macs",
    "cross_entropy",
    "exp",
    "expand_leading",
    "gelu",
    "grad_check",
    "l2_normalize_channels",
    "matmul",
    "mul",
    "mul_scalar",
    "no_grad",
    "pair_inner",
    "permute",
    "reshape",
    "resize_bilinear",
    "scale",
    "softmax_lastdim",
    "sub",
    "sum_all",
]
