"""Differentiable neural-network operations: convolutions, batch norm, linear."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ContractViolation
from . import kernels
from .tensor import Tensor, as_tensor, make_node


def _pads(padding) -> tuple[int, int]:
    if isinstance(padding, int):
        return padding, padding
    lo, hi = padding
    return int(lo), int(hi)


def conv_output_size(n: int, k: int, stride: int, padding) -> int:
    lo, hi = _pads(padding)
    span = n + lo + hi - k
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"conv2d: input extent {n} with kernel {k}, stride {stride}, padding {padding} "
            "does not give an exact output size"
        )
    return span // stride + 1


def _to_rows(a: np.ndarray) -> np.ndarray:
    """NCHW -> ``[C, B*H*W]``."""
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(a.shape[1], -1)


def _from_rows(a: np.ndarray, B: int, H: int, W: int) -> np.ndarray:
    """``[C, B*H*W]`` -> contiguous NCHW."""
    return np.ascontiguousarray(a.reshape(-1, B, H, W).transpose(1, 0, 2, 3))


def conv2d(x, weight, bias=None, stride: int = 1, padding=0) -> Tensor:
    """2-D cross-correlation of ``x[B,C,H,W]`` with ``weight[O,C,k,k]``.

    ``padding`` is an int or a ``(before, after)`` pair applied to both
    spatial axes. The output extent must be exact: ``(H + pads - k)`` has to
    be divisible by ``stride``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractViolation(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Ci, k, k2 = weight.shape
    if Ci != C or k != k2:
        raise ContractViolation(f"conv2d: weight {weight.shape} incompatible with input {x.shape}")
    if k % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel size must be odd, got {k}")
    lo, hi = _pads(padding)
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    cols = kernels.im2col(np.ascontiguousarray(x.data), k, stride, lo, hi)
    wmat = weight.data.reshape(O, -1)
    out = _from_rows(wmat @ cols, B, Ho, Wo)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, O, 1, 1)

    def bw(g):
        grows = _to_rows(g)
        gx = gw = gb = None
        if x.requires_grad:
            gx = kernels.col2im(wmat.T @ grows, (B, C, H, W), k, stride, lo, hi)
        if weight.requires_grad:
            gw = (grows @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = grows.sum(axis=1)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw)


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of ``x[B,Cin,H,W]`` with ``weight[Cin,Cout,k,k]``.

    Output extent is ``(H - 1) * stride - 2 * padding + k``; this is the
    adjoint of :func:`conv2d` with the same geometry.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ContractViolation(
            f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {weight.shape}"
        )
    B, Ci, H, W = x.shape
    Cw, O, k, k2 = weight.shape
    if Cw != Ci or k != k2:
        raise ContractViolation(f"conv_transpose2d: weight {weight.shape} incompatible with input {x.shape}")
    Hp = (H - 1) * stride + k
    Wp = (W - 1) * stride + k
    Ho, Wo = Hp - 2 * padding, Wp - 2 * padding
    if Ho <= 0 or Wo <= 0:
        raise ConfigurationError(f"conv_transpose2d: padding {padding} leaves no output")
    xrows = _to_rows(x.data)
    wmat = weight.data.reshape(Ci, O * k * k)
    # adjoint of a strided correlation on an input padded by `padding` on each side
    out = kernels.col2im(wmat.T @ xrows, (B, O, Ho, Wo), k, stride, padding, padding)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, O, 1, 1)

    def bw(g):
        cols = kernels.im2col(np.ascontiguousarray(g), k, stride, padding, padding)  # [O*k*k, B*H*W]
        gx = gw = gb = None
        if x.requires_grad:
            gx = _from_rows(wmat @ cols, B, H, W)
        if weight.requires_grad:
            gw = (xrows @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation of ``x[B,C,H,W]``.

    Modes: ``train`` normalises with batch statistics and updates the running
    buffers in place (EMA with ``momentum``); ``frozen`` uses batch statistics
    but leaves the buffers untouched; ``eval`` uses the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ContractViolation(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if mode not in ("train", "frozen", "eval"):
        raise ConfigurationError(f"batch_norm: unknown mode {mode!r}")
    gam = gamma.data.reshape(1, -1, 1, 1)
    axes = (0, 2, 3)
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
        out = gam * xhat + beta.data.reshape(1, -1, 1, 1)

        def bw(g):
            gx = g * (gam * inv_std.reshape(1, -1, 1, 1)) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return make_node(out, (x, gamma, beta), bw)

    n = x.data.size // x.shape[1]
    mu = x.data.mean(axis=axes)
    centred = x.data - mu.reshape(1, -1, 1, 1)
    var = (centred * centred).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std.reshape(1, -1, 1, 1)
    out = gam * xhat + beta.data.reshape(1, -1, 1, 1)
    if mode == "train":
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gam
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            gx = (inv_std.reshape(1, -1, 1, 1) / n) * (n * dxhat - s1 - xhat * s2)
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_node(out, (x, gamma, beta), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x[B,in] @ weight[out,in].T + bias[out]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ContractViolation(f"linear: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, bw)


def gaussian_sample(shape, rng: np.random.Generator) -> Tensor:
    """Standard-normal tensor drawn from ``rng`` (no gradient)."""
    return Tensor(rng.standard_normal(shape))
