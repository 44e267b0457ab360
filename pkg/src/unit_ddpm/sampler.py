"""Release-time conditioned reverse chain that translates source images to the target domain.

For ``t = T .. t_r + 1`` the source side is a fresh forward-process draw from
the clean input at every step while the target side takes conditioned
reverse steps. From ``t_r`` down to 1 both sides evolve by their own reverse
steps, each conditioned on the other's previous state. All noise, including
the source-side re-noising, is zero at ``t = 1``.

Denoisers are plain callables ``eps(x_self, x_cond, t) -> ndarray`` so the
chain can run on trained networks or on closed-form predictors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigurationError, ContractViolation, NumericalFailure
from .numeric.rng import SAMPLER, make_rng
from .schedule import NoiseSchedule, q_sample, reverse_step

EpsFn = Callable[[np.ndarray, np.ndarray, int], np.ndarray]

# release times studied at T = 1000; scaled proportionally for other chain lengths
ABLATION_REFERENCE = (1, 100, 300, 500, 700, 900)


@dataclass(frozen=True)
class SamplerConfig:
    t_r: int = 1
    T: int = 1000
    seed: int = 0
    record_trajectory: bool = False
    variant: str = "standard"

    def __post_init__(self):
        if self.T < 1:
            raise ConfigurationError(f"chain length T must be >= 1, got {self.T}")
        if not 1 <= self.t_r <= self.T:
            raise ConfigurationError(f"release time t_r must lie in [1, {self.T}], got {self.t_r}")


@dataclass
class Trajectory:
    """Per-side chain states keyed by timestep, with the predictions and noise that produced them.

    ``x[side][t]`` holds the state at ``t`` (``T .. 0``). ``eps_hat[side][t]``
    and ``z[side][t]`` are the inputs of the reverse step taken *at* ``t``;
    ``renoised[t]`` is the source-side forward draw used at ``t``.
    """

    x: dict
    eps_hat: dict
    z: dict
    renoised: dict

    @classmethod
    def empty(cls) -> "Trajectory":
        return cls({"src": {}, "tgt": {}}, {"src": {}, "tgt": {}}, {"src": {}, "tgt": {}}, {})

    def records(self) -> dict[str, np.ndarray]:
        rec = {}
        for side in ("src", "tgt"):
            for t, v in sorted(self.x[side].items(), reverse=True):
                rec[f"{side}/x/{t}"] = v
            for t, v in sorted(self.eps_hat[side].items(), reverse=True):
                rec[f"{side}/eps_hat/{t}"] = v
            for t, v in sorted(self.z[side].items(), reverse=True):
                rec[f"{side}/z/{t}"] = v
        return rec

    def save(self, path, header: dict | None = None) -> None:
        ckpt.write_records(path, {"kind": "trajectory", **(header or {})}, self.records())


def _check_finite(arr, side: str, t: int, traj: Trajectory, dump_path, cfg: SamplerConfig, last: dict) -> None:
    if np.all(np.isfinite(arr)):
        return
    info = {"side": side, "t": t, "t_r": cfg.t_r, "T": cfg.T, "seed": cfg.seed}
    if dump_path is not None:
        # the recorded chain (if any) plus the states that produced the failure
        rec = {**traj.records(), **{f"last/{k}": v for k, v in last.items() if v is not None}}
        ckpt.write_records(dump_path, {"kind": "trajectory", "failure": info}, rec)
        info["dump"] = str(dump_path)
    raise NumericalFailure(f"non-finite {side} state at t={t} (release time {cfg.t_r})", info)


def translate(
    eps_src: EpsFn,
    eps_tgt: EpsFn,
    x_src0,
    cfg: SamplerConfig,
    sched: NoiseSchedule,
    dump_path=None,
) -> tuple[np.ndarray, Trajectory | None]:
    """Translate ``x_src0`` (values in ``[-1, 1]``) into the target domain.

    Returns ``(x_tgt0, trajectory)``; the trajectory is ``None`` unless
    ``cfg.record_trajectory`` is set. On a non-finite state the partial
    trajectory is written to ``dump_path`` (when given) and
    :class:`NumericalFailure` is raised.
    """
    if cfg.T != sched.T:
        raise ConfigurationError(f"sampler T={cfg.T} does not match schedule T={sched.T}")
    x0 = np.asarray(x_src0, dtype=np.float64)
    if not np.all(np.isfinite(x0)) or x0.size == 0 or x0.min() < -1.0 or x0.max() > 1.0:
        raise ContractViolation("source images must be finite and lie in [-1, 1]")
    rng = make_rng(cfg.seed, SAMPLER)
    shape = x0.shape
    record = cfg.record_trajectory
    traj = Trajectory.empty()

    def renoise(t, eps):
        if record:
            traj.renoised[t] = eps
        return q_sample(x0, t, eps, sched).data

    x_tgt = rng.standard_normal(shape)
    x_src = None
    for t in range(cfg.T, 0, -1):
        if t > 1:
            zA, zB = rng.standard_normal(shape), rng.standard_normal(shape)
        else:
            zA = zB = np.zeros(shape)
        if t > cfg.t_r:
            x_src = renoise(t, zA)
        elif x_src is None:
            # entry state of the free-running phase: one more forward draw at t_r
            x_src = renoise(t, rng.standard_normal(shape))
        if record:
            traj.x["src"][t] = x_src
            traj.x["tgt"][t] = x_tgt
        if t > cfg.t_r:
            e_tgt = np.asarray(eps_tgt(x_tgt, x_src, t), dtype=np.float64)
            new_tgt = reverse_step(x_tgt, e_tgt, zB, t, sched, cfg.variant)
            new_src = None
        else:
            # both sides read the other's state at t (values before this update)
            e_src = np.asarray(eps_src(x_src, x_tgt, t), dtype=np.float64)
            e_tgt = np.asarray(eps_tgt(x_tgt, x_src, t), dtype=np.float64)
            new_src = reverse_step(x_src, e_src, zA, t, sched, cfg.variant)
            new_tgt = reverse_step(x_tgt, e_tgt, zB, t, sched, cfg.variant)
            if record:
                traj.eps_hat["src"][t], traj.z["src"][t] = e_src, zA
        if record:
            traj.eps_hat["tgt"][t], traj.z["tgt"][t] = e_tgt, zB
        last = {"src": x_src, "tgt": x_tgt, "new_src": new_src, "new_tgt": new_tgt}
        _check_finite(new_tgt, "tgt", t, traj, dump_path, cfg, last)
        if new_src is not None:
            _check_finite(new_src, "src", t, traj, dump_path, cfg, last)
        x_src, x_tgt = new_src, new_tgt  # phase 1 leaves x_src unset
    if record:
        traj.x["src"][0] = x_src
        traj.x["tgt"][0] = x_tgt
    return x_tgt, (traj if record else None)


def translate_reverse_direction(eps_A: EpsFn, eps_B: EpsFn, x_B0, cfg: SamplerConfig, sched: NoiseSchedule, dump_path=None):
    """B -> A translation: :func:`translate` with the domain roles swapped."""
    return translate(eps_B, eps_A, x_B0, cfg, sched, dump_path)


def bind_denoiser(net, params: dict, buffers: dict, mode: str = "eval") -> EpsFn:
    """Wrap a denoiser network and its weights as a gradient-free ``eps`` callable."""
    from .networks import as_params

    p = as_params(params, requires_grad=False)

    def eps(x_self, x_cond, t):
        return net.apply(p, buffers, x_self, x_cond, t, mode=mode).data

    return eps


def default_release_times(T: int) -> list[int]:
    return sorted({min(T, max(1, round(v * T / 1000))) for v in ABLATION_REFERENCE})


def ablate_release_time(
    eps_src: EpsFn,
    eps_tgt: EpsFn,
    images,
    t_r_list,
    sched: NoiseSchedule,
    eval_fn: Callable[[np.ndarray], float],
    seed: int = 0,
    out_dir=None,
) -> list[tuple[int, float]]:
    """Translate ``images`` once per release time and score each output set with ``eval_fn``.

    Rows come back sorted by ``t_r``. With ``out_dir`` set, a plain-text
    table (``ablation.txt``) and a two-column data file (``ablation.dat``)
    are written there.
    """
    t_rs = sorted({int(t) for t in t_r_list})
    if not t_rs:
        raise ConfigurationError("release-time list is empty")
    for t in t_rs:
        if not 1 <= t <= sched.T:
            raise ConfigurationError(f"release time {t} outside [1, {sched.T}]")
    rows = []
    for t_r in t_rs:
        out, _ = translate(eps_src, eps_tgt, images, SamplerConfig(t_r, sched.T, seed), sched)
        rows.append((t_r, float(eval_fn(out))))
    if out_dir is not None:
        write_ablation(rows, out_dir)
    return rows


def write_ablation(rows, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "ablation.txt"
    data = out_dir / "ablation.dat"
    lines = ["t_r, metric"] + [f"{t}, {m:.10g}" for t, m in rows]
    table.write_text("\n".join(lines) + "\n")
    data.write_text("# t_r metric\n" + "".join(f"{t} {m!r}\n" for t, m in rows))
    return table, data


def noise_floor(sched: NoiseSchedule) -> float:
    """Std of the final-step noise injected at ``t = 2`` (for tolerance setting)."""
    return math.sqrt(1.0 - sched.a(2)) if sched.T >= 2 else 0.0
