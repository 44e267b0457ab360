"""Bias-corrected Adam over named numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractViolation


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            0,
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update. Returns new parameter arrays and a new state; inputs are not mutated."""
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigurationError(f"Adam betas must lie in [0, 1), got {beta1}, {beta2}")
    if lr < 0:
        raise ConfigurationError(f"Adam learning rate must be non-negative, got {lr}")
    if state.step_count == 0 and not state.first_moment:
        state = AdamState.zeros_like(params)
    if set(grads) != set(params) or set(state.first_moment) != set(params):
        raise ContractViolation("Adam: parameter, gradient and state names differ")
    t = state.step_count + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m, v = state.first_moment[name], state.second_moment[name]
        if g.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
            raise ContractViolation(f"Adam: shape mismatch for {name!r}: param {p.shape}, grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)
