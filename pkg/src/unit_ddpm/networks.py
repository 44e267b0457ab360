"""Conditional U-Net noise predictor and ResNet domain translator.

Both networks are functional: an architecture object owns only its
configuration, and ``apply`` takes the parameter and buffer dicts explicitly.
Parameters are passed as :class:`~unit_ddpm.numeric.Tensor` values, so the
caller decides which ones carry gradients (the training loop freezes one
network while it updates the other).

Batch-norm modes: ``train`` (batch statistics, running buffers updated),
``frozen`` (batch statistics, buffers untouched) and ``eval`` (running
statistics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .numeric import (
    Tensor,
    as_tensor,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    linear,
    relu,
    tanh,
)

Params = dict[str, Tensor]
Buffers = dict[str, np.ndarray]


def embed_timestep(t: int, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Transformer-style sinusoidal embedding: ``[sin(t w_i)..., cos(t w_i)...]``, ``w_i = max_period**(-2i/dim)``."""
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"timestep embedding dim must be a positive even integer, got {dim}")
    if t < 0:
        raise ContractViolation(f"timestep must be non-negative, got {t}")
    half = dim // 2
    freqs = max_period ** (-2.0 * np.arange(half, dtype=np.float64) / dim)
    args = t * freqs
    return np.concatenate([np.sin(args), np.cos(args)])


def as_params(arrays: dict[str, np.ndarray], requires_grad: bool = True) -> Params:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}


def param_arrays(params: Params) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in params.items()}


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bn(p: Params, b: Buffers, name: str, x, mode: str) -> Tensor:
    return batch_norm(x, p[name + ".g"], p[name + ".b"], b[name + ".mean"], b[name + ".var"], mode=mode)


def _add_bn(params: dict, buffers: dict, name: str, c: int) -> None:
    params[name + ".g"] = np.ones(c)
    params[name + ".b"] = np.zeros(c)
    buffers[name + ".mean"] = np.zeros(c)
    buffers[name + ".var"] = np.ones(c)


def _add_conv(params: dict, rng, name: str, cout: int, cin: int, k: int, bias: bool = True) -> None:
    params[name + ".w"] = _uniform(rng, (cout, cin, k, k), cin * k * k)
    if bias:
        params[name + ".bias"] = np.zeros(cout)


def copy_buffers(buffers: Buffers) -> Buffers:
    return {k: v.copy() for k, v in buffers.items()}


# --- denoiser ------------------------------------------------------------


@dataclass(frozen=True)
class UNetConfig:
    channels: int = 1
    widths: tuple[int, ...] = (32, 64, 128)
    emb_dim: int = 32
    max_period: float = 10000.0

    def __post_init__(self):
        if self.channels < 1 or not self.widths or min(self.widths) < 1:
            raise ConfigurationError(f"invalid U-Net configuration {self}")
        if self.emb_dim <= 0 or self.emb_dim % 2:
            raise ConfigurationError(f"emb_dim must be a positive even integer, got {self.emb_dim}")


class UNetDenoiser:
    """Noise predictor ``eps(x_self, x_cond, t)``.

    The conditioning image is concatenated with the noisy self-domain image
    at the input. Each level has one pre-activation residual block (BN, ReLU
    before every convolution) with the timestep embedding, after a per-block
    linear projection, added to the output of the block's second norm. Downsampling is a stride-2 3x3 conv,
    upsampling a stride-2 4x4 transposed conv, with skip concatenation.
    """

    def __init__(self, cfg: UNetConfig):
        self.cfg = cfg
        self.levels = len(cfg.widths)

    @property
    def min_divisor(self) -> int:
        return 2 ** (self.levels - 1)

    # parameter layout

    def _res_init(self, params, buffers, rng, name, cin, cout):
        _add_bn(params, buffers, name + ".bn1", cin)
        _add_conv(params, rng, name + ".conv1", cout, cin, 3, bias=False)
        params[name + ".temb.w"] = _uniform(rng, (cout, self.cfg.emb_dim), self.cfg.emb_dim)
        params[name + ".temb.bias"] = np.zeros(cout)
        _add_bn(params, buffers, name + ".bn2", cout)
        _add_conv(params, rng, name + ".conv2", cout, cout, 3)
        if cin != cout:
            _add_conv(params, rng, name + ".skip", cout, cin, 1, bias=False)

    def init(self, rng: np.random.Generator) -> tuple[dict[str, np.ndarray], Buffers]:
        c, w = self.cfg.channels, self.cfg.widths
        params: dict[str, np.ndarray] = {}
        buffers: Buffers = {}
        _add_conv(params, rng, "in", w[0], 2 * c, 3)
        for lvl in range(self.levels):
            self._res_init(params, buffers, rng, f"enc{lvl}", w[lvl], w[lvl])
            if lvl < self.levels - 1:
                _add_bn(params, buffers, f"down{lvl}.bn", w[lvl])
                _add_conv(params, rng, f"down{lvl}", w[lvl + 1], w[lvl], 3)
        for lvl in reversed(range(self.levels - 1)):
            _add_bn(params, buffers, f"up{lvl}.bn", w[lvl + 1])
            # transposed conv weight is [Cin, Cout, k, k]; fan-in per output ~ Cin * k^2 / stride^2
            params[f"up{lvl}.w"] = _uniform(rng, (w[lvl + 1], w[lvl], 4, 4), w[lvl + 1] * 4)
            params[f"up{lvl}.bias"] = np.zeros(w[lvl])
            self._res_init(params, buffers, rng, f"dec{lvl}", 2 * w[lvl], w[lvl])
        _add_bn(params, buffers, "out.bn", w[0])
        _add_conv(params, rng, "out", c, w[0], 3)
        return params, buffers

    # forward

    def _res(self, p, b, name, x, temb, mode):
        h = conv2d(relu(_bn(p, b, name + ".bn1", x, mode)), p[name + ".conv1.w"], padding=1)
        proj = linear(temb, p[name + ".temb.w"], p[name + ".temb.bias"])
        # added after the norm: a per-channel constant before batch statistics would be subtracted out
        h = _bn(p, b, name + ".bn2", h, mode) + proj.reshape(1, -1, 1, 1)
        h = conv2d(relu(h), p[name + ".conv2.w"], p[name + ".conv2.bias"], padding=1)
        skip = conv2d(x, p[name + ".skip.w"]) if name + ".skip.w" in p else x
        return skip + h

    def apply(self, params: Params, buffers: Buffers, x_self, x_cond, t: int, mode: str = "train") -> Tensor:
        x_self, x_cond = as_tensor(x_self), as_tensor(x_cond)
        if x_self.shape != x_cond.shape:
            raise ContractViolation(f"denoiser: x_self {x_self.shape} and x_cond {x_cond.shape} differ")
        if x_self.ndim != 4 or x_self.shape[1] != self.cfg.channels:
            raise ContractViolation(
                f"denoiser expects [B,{self.cfg.channels},H,W] input, got {x_self.shape}"
            )
        H, W = x_self.shape[2:]
        if H % self.min_divisor or W % self.min_divisor:
            raise ConfigurationError(
                f"denoiser with {self.levels} levels needs H, W divisible by {self.min_divisor}, got {H}x{W}"
            )
        p, b = params, buffers
        temb = Tensor(embed_timestep(t, self.cfg.emb_dim, self.cfg.max_period)[None, :])
        h = conv2d(concat([x_self, x_cond], axis=1), p["in.w"], p["in.bias"], padding=1)
        skips = []
        for lvl in range(self.levels):
            h = self._res(p, b, f"enc{lvl}", h, temb, mode)
            if lvl < self.levels - 1:
                skips.append(h)
                h = relu(_bn(p, b, f"down{lvl}.bn", h, mode))
                h = conv2d(h, p[f"down{lvl}.w"], p[f"down{lvl}.bias"], stride=2, padding=(1, 0))
        for lvl in reversed(range(self.levels - 1)):
            h = relu(_bn(p, b, f"up{lvl}.bn", h, mode))
            h = conv_transpose2d(h, p[f"up{lvl}.w"], p[f"up{lvl}.bias"], stride=2, padding=1)
            h = self._res(p, b, f"dec{lvl}", concat([h, skips[lvl]], axis=1), temb, mode)
        h = relu(_bn(p, b, "out.bn", h, mode))
        return conv2d(h, p["out.w"], p["out.bias"], padding=1)


# --- translator ----------------------------------------------------------


@dataclass(frozen=True)
class TranslatorConfig:
    channels: int = 1
    width: int = 32
    blocks: int = 3

    def __post_init__(self):
        if self.channels < 1 or self.width < self.channels or self.blocks < 0:
            raise ConfigurationError(f"invalid translator configuration {self}")


class ResNetTranslator:
    """Clean-image domain map ``g(x)``: entry conv, residual blocks, exit conv, tanh.

    Each block computes ``x + BN(conv(ReLU(BN(conv(x)))))``.
    """

    def __init__(self, cfg: TranslatorConfig):
        self.cfg = cfg

    def init(self, rng: np.random.Generator) -> tuple[dict[str, np.ndarray], Buffers]:
        c, w = self.cfg.channels, self.cfg.width
        params: dict[str, np.ndarray] = {}
        buffers: Buffers = {}
        _add_conv(params, rng, "entry", w, c, 3)
        for r in range(self.cfg.blocks):
            _add_conv(params, rng, f"block{r}.conv1", w, w, 3, bias=False)
            _add_bn(params, buffers, f"block{r}.bn1", w)
            _add_conv(params, rng, f"block{r}.conv2", w, w, 3, bias=False)
            _add_bn(params, buffers, f"block{r}.bn2", w)
        _add_conv(params, rng, "exit", c, w, 3)
        return params, buffers

    def identity_init(self) -> tuple[dict[str, np.ndarray], Buffers]:
        """Entry/exit copy channels through, residual convs are zero: the map is ``tanh(x)``."""
        params, buffers = self.init(np.random.default_rng(0))
        c = self.cfg.channels
        for k in params:
            params[k] = np.zeros_like(params[k]) if not k.endswith(".g") else params[k]
        for ch in range(c):
            params["entry.w"][ch, ch, 1, 1] = 1.0
            params["exit.w"][ch, ch, 1, 1] = 1.0
        return params, buffers

    def apply(self, params: Params, buffers: Buffers, x, mode: str = "train") -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.cfg.channels:
            raise ContractViolation(f"translator expects [B,{self.cfg.channels},H,W] input, got {x.shape}")
        p, b = params, buffers
        h = conv2d(x, p["entry.w"], p["entry.bias"], padding=1)
        for r in range(self.cfg.blocks):
            n = f"block{r}"
            y = relu(_bn(p, b, n + ".bn1", conv2d(h, p[n + ".conv1.w"], padding=1), mode))
            y = _bn(p, b, n + ".bn2", conv2d(y, p[n + ".conv2.w"], padding=1), mode)
            h = h + y
        return tanh(conv2d(h, p["exit.w"], p["exit.bias"], padding=1))
