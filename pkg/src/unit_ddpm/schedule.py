"""Linear noise schedule, forward noising and the reverse sampling step.

Timesteps are 1-based throughout (``t`` in ``1..T``); the arrays in
:class:`NoiseSchedule` are 0-based, so ``alpha[t - 1]`` is the value at ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .numeric import Tensor, as_tensor


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractViolation(f"timestep {t} outside 1..{self.T}")

    def a(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def abar(self, t: int) -> float:
        return float(self.alpha_bar[t - 1])

    def sig(self, t: int) -> float:
        return float(self.sigma[t - 1])


def schedule_from_alphas(alpha) -> NoiseSchedule:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ConfigurationError("alpha must be a non-empty 1-D sequence")
    if np.any(alpha <= 0) or np.any(alpha >= 1):
        raise ConfigurationError("every alpha must lie strictly inside (0, 1)")
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(int(alpha.size), alpha, alpha_bar, np.sqrt(1.0 - alpha))


def make_linear_schedule(T: int, alpha_first: float = 0.9999, alpha_last: float = 0.98) -> NoiseSchedule:
    """Schedule with ``alpha_t`` decreasing linearly from ``alpha_first`` (t=1) to ``alpha_last`` (t=T)."""
    if T < 1:
        raise ConfigurationError(f"chain length T must be >= 1, got {T}")
    if not (0.0 < alpha_last <= alpha_first < 1.0):
        raise ConfigurationError(
            f"need 0 < alpha_last <= alpha_first < 1, got alpha_first={alpha_first}, alpha_last={alpha_last}"
        )
    if T == 1:
        alpha = np.array([alpha_first], dtype=np.float64)
    else:
        step = (alpha_first - alpha_last) / (T - 1)
        alpha = alpha_first - np.arange(T, dtype=np.float64) * step
        alpha[-1] = alpha_last  # exact endpoint
    return schedule_from_alphas(alpha)


def q_sample(x0, t: int, eps, sched: NoiseSchedule) -> Tensor:
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``; differentiable in ``x0``."""
    sched.check_t(t)
    x0, eps = as_tensor(x0), as_tensor(eps)
    if x0.shape != eps.shape:
        raise ContractViolation(f"q_sample: x0 {x0.shape} and noise {eps.shape} differ")
    ab = sched.abar(t)
    return x0 * np.sqrt(ab) + eps * np.sqrt(1.0 - ab)


def posterior_mean(x_t, eps_hat, t: int, sched: NoiseSchedule, variant: str = "standard"):
    """Mean of the reverse transition given a noise prediction.

    ``variant="standard"`` divides by ``sqrt(alpha_t)``. ``variant="as_printed"``
    divides by ``sqrt(1 - alpha_t)`` instead, reproducing the inference
    pseudocode literally; it exists only for comparison runs.
    Works on numpy arrays or tensors.
    """
    sched.check_t(t)
    if np.shape(x_t) != np.shape(eps_hat):
        raise ContractViolation(f"posterior_mean: x_t {np.shape(x_t)} and eps_hat {np.shape(eps_hat)} differ")
    a, ab = sched.a(t), sched.abar(t)
    if variant == "standard":
        scale = 1.0 / np.sqrt(a)
    elif variant == "as_printed":
        scale = 1.0 / np.sqrt(1.0 - a)
    else:
        raise ConfigurationError(f"unknown posterior-mean variant {variant!r}")
    return (x_t - eps_hat * ((1.0 - a) / np.sqrt(1.0 - ab))) * scale


def reverse_step(x_t, eps_hat, z, t: int, sched: NoiseSchedule, variant: str = "standard"):
    """One ancestral step: ``posterior_mean + sigma_t * z``. Callers pass ``z = 0`` at ``t = 1``."""
    if np.shape(z) != np.shape(x_t):
        raise ContractViolation(f"reverse_step: noise {np.shape(z)} and x_t {np.shape(x_t)} differ")
    return posterior_mean(x_t, eps_hat, t, sched, variant) + z * sched.sig(t)
