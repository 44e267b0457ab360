"""Alternating optimisation of the two denoisers and the two translators.

One training step draws a single set of timesteps ``tA, tB`` and noises
``epsA, epsB``, then

1. updates the denoisers on the conditional denoising objective with the
   translators held fixed, and
2. updates the translators on the four-term denoising objective plus the
   weighted cycle-consistency penalty, with the freshly updated denoisers
   held fixed.

Squared norms and L1 norms are averaged over elements (a uniform rescaling
of the summed form).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigurationError, ContractViolation, NumericalFailure
from .networks import as_params, copy_buffers
from .numeric import AdamState, Tensor, adam_step, grad, mean, square, tabs
from .numeric.rng import INIT, SHUFFLE, STEP, make_rng, rng_state
from .schedule import NoiseSchedule, q_sample

log = logging.getLogger(__name__)

NETS = ("theta_A", "theta_B", "phi_A", "phi_B")


@dataclass(frozen=True)
class TrainConfig:
    lambda_cyc: float = 10.0
    batch_size: int = 16
    lr: float = 1e-5
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 1
    max_steps: int = 0  # > 0 overrides epochs
    seed: int = 0
    cycle_norm: str = "L1"

    def __post_init__(self):
        if self.lambda_cyc < 0:
            raise ConfigurationError(f"lambda_cyc must be >= 0, got {self.lambda_cyc}")
        if self.batch_size < 1 or self.epochs < 1 or self.max_steps < 0:
            raise ConfigurationError("batch_size and epochs must be positive, max_steps non-negative")
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.cycle_norm not in ("L1", "L2"):
            raise ConfigurationError(f"cycle_norm must be L1 or L2, got {self.cycle_norm!r}")


@dataclass
class DualModel:
    """Architectures for the denoisers (shared by both domains) and the translators."""

    denoiser: Any
    translator: Any


@dataclass
class TrainState:
    params: dict[str, dict[str, np.ndarray]]
    buffers: dict[str, dict[str, np.ndarray]]
    opt: dict[str, AdamState]
    step: int = 0
    seed: int = 0

    def copy(self) -> "TrainState":
        return TrainState(
            {n: {k: v.copy() for k, v in p.items()} for n, p in self.params.items()},
            {n: copy_buffers(b) for n, b in self.buffers.items()},
            {
                n: AdamState(
                    {k: v.copy() for k, v in s.first_moment.items()},
                    {k: v.copy() for k, v in s.second_moment.items()},
                    s.step_count,
                )
                for n, s in self.opt.items()
            },
            self.step,
            self.seed,
        )


def init_state(model: DualModel, seed: int) -> TrainState:
    params, buffers = {}, {}
    for i, name in enumerate(NETS):
        arch = model.denoiser if name.startswith("theta") else model.translator
        params[name], buffers[name] = arch.init(make_rng(seed, INIT, i))
    opt = {n: AdamState.zeros_like(params[n]) for n in NETS}
    return TrainState(params, buffers, opt, 0, seed)


class StepNoise(NamedTuple):
    tA: int
    tB: int
    epsA: np.ndarray
    epsB: np.ndarray


def sample_timesteps(rng: np.random.Generator, T: int, size: int = 2) -> np.ndarray:
    """Independent uniform draws on ``{1..T}``."""
    return rng.integers(1, T + 1, size=size)


def draw_step_noise(seed: int, step: int, shape: tuple, T: int) -> StepNoise:
    rng = make_rng(seed, STEP, step)
    tA, tB = (int(v) for v in sample_timesteps(rng, T))
    return StepNoise(tA, tB, rng.standard_normal(shape), rng.standard_normal(shape))


# --- objectives ------------------------------------------------------------


def _sq(a, b) -> Tensor:
    return mean(square(a - b))


def _cycle(a, b, norm: str) -> Tensor:
    d = a - b
    return mean(tabs(d)) if norm == "L1" else mean(square(d))


def _check_batches(xA, xB, epsA, epsB):
    shapes = {np.shape(v) for v in (xA, xB, epsA, epsB)}
    if len(shapes) != 1:
        raise ContractViolation(f"batches and noises must share one shape, got {sorted(shapes)}")


def dsm_loss(net, params, buffers, x0, t: int, eps, sched: NoiseSchedule, x_cond=None, mode: str = "train") -> Tensor:
    """Single-domain denoising objective ``mean ||eps - eps_hat(x_t, c, t)||^2``."""
    sched.check_t(t)
    x_t = q_sample(x0, t, eps, sched)
    cond = x_t if x_cond is None else x_cond
    return _sq(eps, net.apply(params, buffers, x_t, cond, t, mode=mode))


def denoising_loss(
    model: DualModel,
    params: dict[str, dict[str, Tensor]],
    buffers: dict[str, dict[str, np.ndarray]],
    xA,
    xB,
    tA: int,
    tB: int,
    epsA,
    epsB,
    sched: NoiseSchedule,
    denoiser_mode: str = "train",
    translator_mode: str = "frozen",
) -> Tensor:
    """Conditional denoising objective for both denoisers.

    ``||epsA - eps_A(xA_tA, g_A(xA)_tA, tA)||^2 + ||epsB - eps_B(xB_tB, g_B(xB)_tB, tB)||^2``
    where the translated conditioning image reuses the *other* domain's noise
    (``g_A(xA)`` is diffused with ``epsB``, ``g_B(xB)`` with ``epsA``).
    """
    _check_batches(xA, xB, epsA, epsB)
    sched.check_t(tA)
    sched.check_t(tB)
    den, tr = model.denoiser, model.translator
    xtB0 = tr.apply(params["phi_A"], buffers["phi_A"], xA, mode=translator_mode)
    xtA0 = tr.apply(params["phi_B"], buffers["phi_B"], xB, mode=translator_mode)
    xA_t = q_sample(xA, tA, epsA, sched)
    xB_t = q_sample(xB, tB, epsB, sched)
    xtB_tA = q_sample(xtB0, tA, epsB, sched)
    xtA_tB = q_sample(xtA0, tB, epsA, sched)
    predA = den.apply(params["theta_A"], buffers["theta_A"], xA_t, xtB_tA, tA, mode=denoiser_mode)
    predB = den.apply(params["theta_B"], buffers["theta_B"], xB_t, xtA_tB, tB, mode=denoiser_mode)
    return _sq(epsA, predA) + _sq(epsB, predB)


class TranslationTerms(NamedTuple):
    total: Tensor
    dsm: Tensor
    cycle: Tensor


def translation_loss_terms(
    model: DualModel,
    params,
    buffers,
    xA,
    xB,
    tA: int,
    tB: int,
    epsA,
    epsB,
    sched: NoiseSchedule,
    lambda_cyc: float,
    cycle_norm: str = "L1",
    denoiser_mode: str = "frozen",
    translator_mode: str = "train",
) -> TranslationTerms:
    """Four-term denoising objective for the translators plus ``lambda_cyc`` times the cycle penalty."""
    _check_batches(xA, xB, epsA, epsB)
    sched.check_t(tA)
    sched.check_t(tB)
    den, tr = model.denoiser, model.translator
    pA, pB = params["phi_A"], params["phi_B"]
    bA, bB = buffers["phi_A"], buffers["phi_B"]
    xtB0 = tr.apply(pA, bA, xA, mode=translator_mode)
    xtA0 = tr.apply(pB, bB, xB, mode=translator_mode)
    xA_t = q_sample(xA, tA, epsA, sched)
    xB_t = q_sample(xB, tB, epsB, sched)
    xtB_tA = q_sample(xtB0, tA, epsB, sched)
    xtA_tB = q_sample(xtA0, tB, epsA, sched)

    def epsA_hat(x_self, x_cond, t):
        return den.apply(params["theta_A"], buffers["theta_A"], x_self, x_cond, t, mode=denoiser_mode)

    def epsB_hat(x_self, x_cond, t):
        return den.apply(params["theta_B"], buffers["theta_B"], x_self, x_cond, t, mode=denoiser_mode)

    dsm = (
        _sq(epsA, epsA_hat(xA_t, xtB_tA, tA))
        + _sq(epsA, epsA_hat(xtA_tB, xB_t, tB))
        + _sq(epsB, epsB_hat(xB_t, xtA_tB, tB))
        + _sq(epsB, epsB_hat(xtB_tA, xA_t, tA))
    )
    cyc = _cycle(tr.apply(pB, bB, xtB0, mode=translator_mode), xA, cycle_norm) + _cycle(
        tr.apply(pA, bA, xtA0, mode=translator_mode), xB, cycle_norm
    )
    return TranslationTerms(dsm + cyc * lambda_cyc, dsm, cyc)


def translation_loss(*args, **kwargs) -> Tensor:
    return translation_loss_terms(*args, **kwargs).total


# --- one step ----------------------------------------------------------------


class StepLosses(NamedTuple):
    loss_theta: float
    loss_phi: float
    loss_cyc: float


def _split(state: TrainState, trainable: tuple[str, ...]) -> dict[str, dict[str, Tensor]]:
    return {n: as_params(state.params[n], requires_grad=n in trainable) for n in NETS}


def _apply_adam(state, params_t, loss, names, cfg) -> None:
    flat = [(n, k, t) for n in names for k, t in params_t[n].items()]
    grads = grad(loss, [t for _, _, t in flat])
    for name in names:
        g = {k: gr for (n, k, _), gr in zip(flat, grads) if n == name}
        new, st = adam_step(
            state.params[name], g, state.opt[name], cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps
        )
        state.params[name], state.opt[name] = new, st


def _finite_or_raise(value: float, what: str, state: TrainState, noise: StepNoise) -> None:
    if not math.isfinite(value):
        dump = {"step": state.step, "tA": noise.tA, "tB": noise.tB, "loss": what, "value": value}
        raise NumericalFailure(f"non-finite {what} at step {state.step + 1}: {value}", dump)


def train_step(
    state: TrainState,
    batchA: np.ndarray,
    batchB: np.ndarray,
    cfg: TrainConfig,
    sched: NoiseSchedule,
    model: DualModel,
    noise: StepNoise | None = None,
) -> tuple[TrainState, StepLosses]:
    """Advance ``state`` by one denoiser update followed by one translator update.

    ``noise`` defaults to the counter-based draw for ``(seed, step)``. The
    input state is not modified.
    """
    if noise is None:
        noise = draw_step_noise(state.seed, state.step, np.shape(batchA), sched.T)
    state = state.copy()
    tA, tB, epsA, epsB = noise

    theta = ("theta_A", "theta_B")
    p = _split(state, theta)
    loss_theta = denoising_loss(model, p, state.buffers, batchA, batchB, tA, tB, epsA, epsB, sched)
    _finite_or_raise(loss_theta.item(), "loss_theta", state, noise)
    _apply_adam(state, p, loss_theta, theta, cfg)

    phi = ("phi_A", "phi_B")
    p = _split(state, phi)
    terms = translation_loss_terms(
        model, p, state.buffers, batchA, batchB, tA, tB, epsA, epsB, sched, cfg.lambda_cyc, cfg.cycle_norm
    )
    _finite_or_raise(terms.total.item(), "loss_phi", state, noise)
    _apply_adam(state, p, terms.total, phi, cfg)

    state.step += 1
    return state, StepLosses(loss_theta.item(), terms.total.item(), terms.cycle.item())


# --- epochs, checkpoints, metrics ------------------------------------------------


def steps_per_epoch(nA: int, nB: int, batch_size: int) -> int:
    return math.ceil(min(nA, nB) / batch_size)


def total_steps(cfg: TrainConfig, nA: int, nB: int) -> int:
    return cfg.max_steps if cfg.max_steps > 0 else cfg.epochs * steps_per_epoch(nA, nB, cfg.batch_size)


def batch_indices(seed: int, step: int, nA: int, nB: int, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices for ``step``: each domain is shuffled independently per epoch.

    An epoch ends when the smaller domain is exhausted. The permutation for
    epoch ``e`` depends only on ``(seed, domain, e)``, so any step can be
    reconstructed directly.
    """
    per = steps_per_epoch(nA, nB, batch_size)
    epoch, j = divmod(step, per)
    n = min(nA, nB)
    lo, hi = j * batch_size, min((j + 1) * batch_size, n)
    permA = make_rng(seed, SHUFFLE, 0, epoch).permutation(nA)
    permB = make_rng(seed, SHUFFLE, 1, epoch).permutation(nB)
    return permA[lo:hi], permB[lo:hi]


def state_records(state: TrainState) -> dict[str, np.ndarray]:
    rec: dict[str, np.ndarray] = {}
    for n in NETS:
        for k, v in state.params[n].items():
            rec[f"{n}/param/{k}"] = v
        for k, v in state.buffers[n].items():
            rec[f"{n}/buffer/{k}"] = v
        for k, v in state.opt[n].first_moment.items():
            rec[f"{n}/adam_m/{k}"] = v
        for k, v in state.opt[n].second_moment.items():
            rec[f"{n}/adam_v/{k}"] = v
    return rec


def save_state(path, state: TrainState, config_echo: dict | None = None) -> None:
    header = {
        "step": state.step,
        "seed": state.seed,
        "adam_steps": {n: state.opt[n].step_count for n in NETS},
        "rng": {"scheme": "philox(seed, stream, step)", "next_step_state": rng_state(make_rng(state.seed, STEP, state.step))},
        "config": config_echo or {},
    }
    ckpt.write_records(path, header, state_records(state))


def load_state(path) -> tuple[TrainState, dict]:
    header, rec = ckpt.read_records(path)
    params = {n: {} for n in NETS}
    buffers = {n: {} for n in NETS}
    ms = {n: {} for n in NETS}
    vs = {n: {} for n in NETS}
    slots = {"param": params, "buffer": buffers, "adam_m": ms, "adam_v": vs}
    for name, arr in rec.items():
        net, kind, key = name.split("/", 2)
        slots[kind][net][key] = arr.copy()
    opt = {n: AdamState(ms[n], vs[n], int(header["adam_steps"][n])) for n in NETS}
    return TrainState(params, buffers, opt, int(header["step"]), int(header["seed"])), header


@dataclass
class LoopResult:
    state: TrainState
    losses: list[StepLosses] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def format_metrics_row(step: int, losses: StepLosses) -> str:
    return f"{step}, {losses.loss_theta:.17g}, {losses.loss_phi:.17g}, {losses.loss_cyc:.17g}\n"


def train_loop(
    cfg: TrainConfig,
    dataA: np.ndarray,
    dataB: np.ndarray,
    sched: NoiseSchedule,
    model: DualModel,
    out_dir=None,
    checkpoint_every: int = 0,
    state: TrainState | None = None,
    config_echo: dict | None = None,
    stop_at: int | None = None,
    on_step: Callable[[TrainState, StepLosses], None] | None = None,
) -> LoopResult:
    """Run training from ``state`` (fresh when ``None``) up to the configured step count.

    ``dataA`` / ``dataB`` are ``[N, C, H, W]`` arrays. With ``out_dir`` set,
    metrics rows are appended to ``metrics.txt`` and checkpoints are written
    at step 0, every ``checkpoint_every`` steps and at the end.
    """
    nA, nB = len(dataA), len(dataB)
    if nA == 0 or nB == 0:
        raise ConfigurationError("training datasets must be non-empty")
    if dataA.shape[1:] != dataB.shape[1:]:
        raise ConfigurationError(f"domain image shapes differ: {dataA.shape[1:]} vs {dataB.shape[1:]}")
    if state is None:
        state = init_state(model, cfg.seed)
    end = total_steps(cfg, nA, nB) if stop_at is None else stop_at
    result = LoopResult(state)
    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        mpath = out_dir / "metrics.txt"
        if not mpath.exists():
            mpath.write_text("# step, loss_theta, loss_phi, loss_cyc\n")
        metrics = open(mpath, "a")

    def checkpoint(s):
        if out_dir is None:
            return
        path = out_dir / f"ckpt_{s.step:06d}.ckpt"
        save_state(path, s, config_echo)
        result.checkpoints.append(path)

    try:
        if state.step == 0:
            checkpoint(state)
        while state.step < end:
            ia, ib = batch_indices(state.seed, state.step, nA, nB, cfg.batch_size)
            state, losses = train_step(state, dataA[ia], dataB[ib], cfg, sched, model)
            result.losses.append(losses)
            if metrics is not None:
                metrics.write(format_metrics_row(state.step, losses))
                metrics.flush()
            if on_step is not None:
                on_step(state, losses)
            if checkpoint_every and state.step % checkpoint_every == 0 and state.step != end:
                checkpoint(state)
            if state.step % 100 == 0:
                log.info("step %d: loss_theta=%.5f loss_phi=%.5f", state.step, losses.loss_theta, losses.loss_phi)
        if not result.checkpoints or result.checkpoints[-1].name != f"ckpt_{state.step:06d}.ckpt":
            checkpoint(state)
    finally:
        if metrics is not None:
            metrics.close()
    result.state = state
    return result
