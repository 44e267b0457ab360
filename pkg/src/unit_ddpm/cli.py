"""Command-line driver: ``unit-ddpm {train,translate,eval,ablate-tr,make-synth}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Every command writes its effective configuration (``config.txt``) and run
metadata (``run_info.txt``) into its output directory.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as config_mod
from .data_io import ImageDataset, load_folder, make_synthetic_domains, save_images
from .errors import ConfigurationError, ContractViolation, NumericalFailure
from .evaluation import fid, fid_report, format_report_row
from .networks import ResNetTranslator, TranslatorConfig, UNetConfig, UNetDenoiser
from .numeric import BACKEND
from .sampler import (
    SamplerConfig,
    ablate_release_time,
    bind_denoiser,
    default_release_times,
    translate,
)
from .schedule import make_linear_schedule
from .training import DualModel, TrainConfig, load_state, train_loop

log = logging.getLogger("unit_ddpm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

# keys fixed by a checkpoint: translate / ablate-tr always rebuild from these
ARCH_KEYS = (
    "image_size", "channels", "T", "alpha_first", "alpha_last",
    "unet_widths", "emb_dim", "translator_width", "translator_blocks",
)


def build_model(cfg: dict) -> DualModel:
    den = UNetDenoiser(UNetConfig(cfg["channels"], tuple(cfg["unet_widths"]), cfg["emb_dim"]))
    tr = ResNetTranslator(TranslatorConfig(cfg["channels"], cfg["translator_width"], cfg["translator_blocks"]))
    return DualModel(den, tr)


def build_schedule(cfg: dict):
    return make_linear_schedule(cfg["T"], cfg["alpha_first"], cfg["alpha_last"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lambda_cyc=cfg["lambda_cyc"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        beta1=cfg["beta1"], beta2=cfg["beta2"], adam_eps=cfg["adam_eps"],
        epochs=cfg["epochs"], max_steps=cfg["max_steps"], seed=cfg["seed"],
        cycle_norm=cfg["cycle_norm"],
    )


def echo(cfg: dict) -> dict[str, str]:
    return {k: config_mod._fmt(v) for k, v in sorted(cfg.items())}


def write_run_dir(out: Path, cfg: dict, command: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_mod.dump(cfg))
    info = [
        f"command = {command}",
        f"unit_ddpm = {__version__}",
        f"numpy = {np.__version__}",
        f"python = {platform.python_version()}",
        f"kernel_backend = {BACKEND}",
        f"seed = {cfg['seed']}",
    ]
    (out / "run_info.txt").write_text("\n".join(info) + "\n")
    return out


def _need(cfg: dict, key: str) -> str:
    if not cfg[key]:
        raise ConfigurationError(f"{key}: required for this command but not set")
    return cfg[key]


def _domain_dir(root: str, name: str, key: str) -> Path:
    p = Path(root) / name
    if not p.is_dir():
        raise ConfigurationError(f"{key}: dataset folder {p} not found")
    return p


def load_trained(cfg: dict):
    """Load the checkpoint named by ``cfg['checkpoint']``; architecture keys come from its header."""
    path = Path(_need(cfg, "checkpoint"))
    if not path.is_file():
        raise ConfigurationError(f"checkpoint: file {path} not found")
    state, header = load_state(path)
    arch = dict(cfg)
    saved = header.get("config", {})
    for k in ARCH_KEYS:
        if k in saved:
            arch[k] = config_mod.parse_value(k, saved[k], f"{path} header")
    return state, arch


def _source_images(cfg: dict, arch: dict, key: str = "input_dir") -> ImageDataset:
    ds = load_folder(_need(cfg, key), None, arch["channels"])
    want = (arch["channels"], arch["image_size"], arch["image_size"])
    if ds.shape != want:
        raise ContractViolation(f"{key}: images have shape {ds.shape} but the checkpoint expects {want}")
    return ds


def _denoisers(arch: dict, state, direction: str, mode: str):
    model = build_model(arch)
    eA = bind_denoiser(model.denoiser, state.params["theta_A"], state.buffers["theta_A"], mode)
    eB = bind_denoiser(model.denoiser, state.params["theta_B"], state.buffers["theta_B"], mode)
    return (eA, eB) if direction == "A2B" else (eB, eA)


# --- commands -------------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    root = _need(cfg, "data_root")
    size, ch = cfg["image_size"], cfg["channels"]
    dA = load_folder(_domain_dir(root, "trainA", "data_root"), size, ch, "A")
    dB = load_folder(_domain_dir(root, "trainB", "data_root"), size, ch, "B")
    out = write_run_dir(Path(cfg["out"]), cfg, "train")
    model, sched = build_model(cfg), build_schedule(cfg)
    state = None
    if cfg["resume"]:
        state, _ = load_state(cfg["resume"])
    res = train_loop(
        train_config(cfg), dA.images, dB.images, sched, model,
        out_dir=out, checkpoint_every=cfg["checkpoint_every"], state=state, config_echo=echo(cfg),
    )
    print(f"trained {res.state.step} steps; last checkpoint {res.checkpoints[-1]}")
    return EXIT_OK


def cmd_translate(cfg: dict) -> int:
    state, arch = load_trained(cfg)
    ds = _source_images(cfg, arch)
    out = write_run_dir(Path(cfg["out"]), cfg, "translate")
    eps_src, eps_tgt = _denoisers(arch, state, cfg["direction"], cfg["norm_mode"])
    scfg = SamplerConfig(cfg["t_r"], arch["T"], cfg["seed"], cfg["save_trajectory"], cfg["posterior_variant"])
    result, traj = translate(eps_src, eps_tgt, ds.images, scfg, build_schedule(arch), dump_path=out / "failure_dump.rec")
    paths = save_images(np.clip(result, -1.0, 1.0), out, names=ds.names, suffix=f"_{cfg['direction']}")
    if traj is not None:
        traj.save(out / "trajectory.rec", {"t_r": cfg["t_r"], "direction": cfg["direction"]})
    print(f"wrote {len(paths)} images to {out}")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    out = write_run_dir(Path(cfg["out"]), cfg, "eval")
    res = fid_report(
        _need(cfg, "real_dir"), _need(cfg, "gen_dir"), cfg["extractor"], out / "fid_report.txt",
        cfg["direction"], cfg["channels"], cfg["seed"],
    )
    print(format_report_row(cfg["direction"], cfg["extractor"], res))
    return EXIT_OK


def cmd_ablate_tr(cfg: dict) -> int:
    state, arch = load_trained(cfg)
    src = _source_images(cfg, arch)
    real = _source_images(cfg, arch, "real_dir")
    t_rs = cfg["ablate_t_r"] or default_release_times(arch["T"])
    for t in t_rs:
        if not 1 <= t <= arch["T"]:
            raise ConfigurationError(f"ablate_t_r: release time {t} outside [1, {arch['T']}]")
    out = write_run_dir(Path(cfg["out"]), cfg, "ablate-tr")
    eps_src, eps_tgt = _denoisers(arch, state, cfg["direction"], cfg["norm_mode"])

    def metric(gen):
        return fid(real.images, np.clip(gen, -1.0, 1.0), cfg["extractor"], cfg["seed"]).fid

    rows = ablate_release_time(eps_src, eps_tgt, src.images, t_rs, build_schedule(arch), metric, cfg["seed"], out)
    print("t_r, metric")
    for t, m in rows:
        print(f"{t}, {m:.10g}")
    return EXIT_OK


def cmd_make_synth(cfg: dict) -> int:
    out = write_run_dir(Path(cfg["out"]), cfg, "make-synth")
    kind, size, seed = cfg["synth_kind"], cfg["image_size"], cfg["seed"]
    for split, n in (("train", cfg["synth_n"]), ("test", cfg["synth_n_test"])):
        a, b, _ = make_synthetic_domains(kind, n, size, seed, split)
        save_images(a.images, out / f"{split}A", names=a.names)
        save_images(b.images, out / f"{split}B", names=b.names)
    print(f"wrote {kind} domains ({cfg['synth_n']} train, {cfg['synth_n_test']} test per domain) to {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "translate": cmd_translate,
    "eval": cmd_eval,
    "ablate-tr": cmd_ablate_tr,
    "make-synth": cmd_make_synth,
}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unit-ddpm", description="Unpaired image translation with dual-domain diffusion models.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="base defaults (desk unless the config names one)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    ap.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    ap.add_argument("--out", help="shorthand for --set out=DIR")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    try:
        cfg = config_mod.load_config(args.config, overrides, args.preset)
        return COMMANDS[args.command](cfg)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
