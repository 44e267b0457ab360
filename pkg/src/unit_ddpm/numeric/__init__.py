"""Numeric substrate: float64 tensors with reverse-mode autodiff, conv kernels, Adam."""

from .functional import batch_norm, conv2d, conv_transpose2d, gaussian_sample, linear
from .kernels import BACKEND
from .optim import AdamState, adam_step
from .rng import make_rng
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    div,
    grad,
    l1_norm,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    square,
    squared_l2,
    sub,
    tabs,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "BACKEND",
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "batch_norm",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "div",
    "gaussian_sample",
    "grad",
    "l1_norm",
    "linear",
    "make_rng",
    "matmul",
    "mean",
    "mul",
    "neg",
    "relu",
    "reshape",
    "square",
    "squared_l2",
    "sub",
    "tabs",
    "tanh",
    "transpose",
    "tsum",
]
