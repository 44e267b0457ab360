"""Flat ``key = value`` run configuration with named presets.

Every key has a documented default. Lines starting with ``#`` are comments,
as is anything after `` #`` on a value line. Unknown keys and unparsable
values are rejected with the file name and line number.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigurationError


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(v) for v in s.split(",")) if s else ()


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


KEYS: dict[str, Key] = {
    # data
    "data_root": Key(str, "", "dataset root holding trainA/ trainB/ (testA/ testB/)"),
    "image_size": Key(int, 16, "square image side after resizing"),
    "channels": Key(int, 1, "image channels (1 or 3)"),
    # schedule
    "T": Key(int, 50, "diffusion chain length"),
    # 1 - alpha of the T=1000 endpoints (0.9999, 0.98) scaled by 1000/T, so abar_T stays near zero
    "alpha_first": Key(float, 0.998, "alpha_1 of the linear schedule"),
    "alpha_last": Key(float, 0.6, "alpha_T of the linear schedule"),
    # architecture
    "unet_widths": Key(_int_list, (16, 32, 64), "denoiser channel widths per resolution level"),
    "emb_dim": Key(int, 32, "timestep embedding size"),
    "translator_width": Key(int, 16, "translator channel width"),
    "translator_blocks": Key(int, 3, "translator residual blocks"),
    # training
    "lambda_cyc": Key(float, 10.0, "cycle-consistency weight"),
    "batch_size": Key(int, 8, "images per domain per step"),
    "lr": Key(float, 1e-3, "Adam learning rate"),
    "beta1": Key(float, 0.5, "Adam beta1"),
    "beta2": Key(float, 0.999, "Adam beta2"),
    "adam_eps": Key(float, 1e-8, "Adam epsilon"),
    "epochs": Key(int, 1, "training epochs (ignored when max_steps > 0)"),
    "max_steps": Key(int, 2000, "training steps; 0 means use epochs"),
    "cycle_norm": Key(_choice("L1", "L2"), "L1", "cycle penalty norm"),
    "checkpoint_every": Key(int, 500, "checkpoint interval in steps (0: only first and last)"),
    "resume": Key(str, "", "checkpoint to resume training from"),
    # sampling
    "checkpoint": Key(str, "", "trained checkpoint for translate / ablate-tr"),
    "input_dir": Key(str, "", "source-domain images to translate"),
    "direction": Key(_choice("A2B", "B2A"), "A2B", "translation direction"),
    "t_r": Key(int, 1, "release time"),
    "posterior_variant": Key(_choice("standard", "as_printed"), "standard", "reverse-step mean scaling"),
    "norm_mode": Key(_choice("eval", "frozen"), "eval", "batch-norm statistics used when sampling"),
    "save_trajectory": Key(_bool, False, "write the full chain to trajectory.rec"),
    # evaluation
    "real_dir": Key(str, "", "reference images for FID"),
    "gen_dir": Key(str, "", "generated images for FID"),
    "extractor": Key(_choice("raw_pixels", "pooled_stats", "fixed_random_conv"), "fixed_random_conv", "FID feature extractor"),
    "ablate_t_r": Key(_int_list, (), "release times to sweep (empty: proportional default)"),
    # synthetic data
    "synth_kind": Key(_choice("invert", "shift_bright", "blobs_to_edges"), "invert", "synthetic domain pair"),
    "synth_n": Key(int, 512, "synthetic training images per domain"),
    "synth_n_test": Key(int, 64, "synthetic test images per domain"),
    # run
    "seed": Key(int, 0, "master seed"),
    "out": Key(str, "runs/out", "output directory"),
}

PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "full": {
        "image_size": 64,
        "channels": 3,
        "T": 1000,
        "alpha_first": 0.9999,
        "alpha_last": 0.98,
        "unet_widths": (32, 64, 128, 256, 256),
        "emb_dim": 128,
        "translator_width": 64,
        "translator_blocks": 6,
        "batch_size": 16,
        "lr": 1e-5,
        "epochs": 20000,
        "max_steps": 0,
        "checkpoint_every": 10000,
    },
}


def defaults(preset: str = "desk") -> dict[str, Any]:
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    cfg = {k: spec.default for k, spec in KEYS.items()}
    cfg.update(PRESETS[preset])
    return cfg


def parse_value(key: str, raw: str, where: str) -> Any:
    if key not in KEYS:
        raise ConfigurationError(f"{where}: unknown key {key!r}")
    try:
        return KEYS[key].parse(raw.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{where}: bad value for {key!r}: {exc}") from None


def split_assignment(line: str, where: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigurationError(f"{where}: expected 'key = value', got {line.strip()!r}")
    key, raw = line.split("=", 1)
    return key.strip(), raw.strip()


def parse_text(text: str, source: str = "<config>") -> tuple[str | None, dict[str, Any]]:
    """Parse config text; returns ``(preset, values)``. ``preset`` is an optional key."""
    preset, values = None, {}
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.split(" #", 1)[0].strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{source}:{n}"
        key, raw = split_assignment(stripped, where)
        if key == "preset":
            if raw not in PRESETS:
                raise ConfigurationError(f"{where}: unknown preset {raw!r}")
            preset = raw
            continue
        values[key] = parse_value(key, raw, where)
    return preset, values


def load_config(path=None, overrides=(), preset: str | None = None) -> dict[str, Any]:
    """Merge preset defaults, an optional config file and ``key=value`` overrides (in that order)."""
    file_preset, file_values = None, {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {p}: {exc}") from None
        file_preset, file_values = parse_text(text, str(p))
    cfg = defaults(preset or file_preset or "desk")
    cfg.update(file_values)
    for i, item in enumerate(overrides, 1):
        key, raw = split_assignment(item, f"--set #{i}")
        cfg[key] = parse_value(key, raw, f"--set #{i}")
    validate(cfg)
    return cfg


def validate(cfg: dict[str, Any]) -> None:
    def need(cond: bool, key: str, msg: str):
        if not cond:
            raise ConfigurationError(f"{key}: {msg} (got {_fmt(cfg[key])})")

    need(cfg["image_size"] >= 1, "image_size", "must be positive")
    need(cfg["channels"] in (1, 3), "channels", "must be 1 or 3")
    need(cfg["T"] >= 1, "T", "must be >= 1")
    need(0 < cfg["alpha_last"] <= cfg["alpha_first"] < 1, "alpha_first", "need 0 < alpha_last <= alpha_first < 1")
    need(len(cfg["unet_widths"]) >= 1 and min(cfg["unet_widths"]) >= 1, "unet_widths", "need at least one positive width")
    need(cfg["emb_dim"] >= 2 and cfg["emb_dim"] % 2 == 0, "emb_dim", "must be an even number >= 2")
    need(cfg["translator_width"] >= 1, "translator_width", "must be positive")
    need(cfg["translator_blocks"] >= 0, "translator_blocks", "must be >= 0")
    need(cfg["checkpoint_every"] >= 0, "checkpoint_every", "must be >= 0")
    need(1 <= cfg["t_r"] <= cfg["T"], "t_r", f"must lie in [1, T={cfg['T']}]")
    need(cfg["synth_n"] >= 2 and cfg["synth_n_test"] >= 2, "synth_n", "synthetic sets need >= 2 images")
    for t in cfg["ablate_t_r"]:
        need(1 <= t <= cfg["T"], "ablate_t_r", f"every release time must lie in [1, T={cfg['T']}]")


def dump(cfg: dict[str, Any]) -> str:
    """Effective configuration in the same grammar it is read in (sorted keys)."""
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in sorted(cfg))
