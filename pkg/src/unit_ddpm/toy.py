"""Linear stand-ins for the denoiser and translator.

They follow the same ``init`` / ``apply`` protocol as the real networks and
make the training objectives tractable by hand, which is what the scalar
oracle checks rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Tensor, as_tensor


@dataclass(frozen=True)
class LinearDenoiser:
    """``eps(x, c, t) = w_self * x + w_cond * c + bias`` with scalar weights shared over pixels.

    ``use_cond=False`` drops the conditioning term entirely.
    """

    w_self: float = 0.0
    w_cond: float = 0.0
    bias: float = 0.0
    use_cond: bool = True

    def init(self, rng=None):
        params = {"w_self": np.array(self.w_self), "bias": np.array(self.bias)}
        if self.use_cond:
            params["w_cond"] = np.array(self.w_cond)
        return params, {}

    def apply(self, params, buffers, x_self, x_cond, t, mode="train") -> Tensor:
        out = as_tensor(x_self) * params["w_self"] + params["bias"]
        if self.use_cond:
            out = out + as_tensor(x_cond) * params["w_cond"]
        return out


@dataclass(frozen=True)
class LinearTranslator:
    """``g(x) = scale * x + shift``."""

    scale: float = 1.0
    shift: float = 0.0

    def init(self, rng=None):
        return {"scale": np.array(self.scale), "shift": np.array(self.shift)}, {}

    def apply(self, params, buffers, x, mode="train") -> Tensor:
        return as_tensor(x) * params["scale"] + params["shift"]
