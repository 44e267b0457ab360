"""Frechet distance between Gaussian fits of image features.

Three feature extractors stand in for a pretrained Inception network:
flattened pixels, per-channel pooled statistics, and a seeded frozen
two-layer random convolution (the default).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import load_folder
from .errors import ConfigurationError, ContractViolation
from .numeric import conv2d
from .numeric.rng import FEATURES, make_rng

EXTRACTORS = ("raw_pixels", "pooled_stats", "fixed_random_conv")
DEFAULT_EXTRACTOR = "fixed_random_conv"
RIDGE_SCALE = 1e-6
PSD_TOL = 1e-10

RANDOM_CONV_WIDTHS = (16, 32)


def _check_batch(images) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ContractViolation(f"expected images [N,C,H,W], got shape {images.shape}")
    if len(images) < 2:
        raise ContractViolation(f"feature statistics need at least 2 images, got {len(images)}")
    return images


def pooled_stats(images: np.ndarray) -> np.ndarray:
    """Per channel: mean, variance and mean squared forward difference (``d = 3C``)."""
    m = images.mean(axis=(2, 3))
    v = images.var(axis=(2, 3))
    gy = np.diff(images, axis=2)
    gx = np.diff(images, axis=3)
    energy = (gy**2).mean(axis=(2, 3)) + (gx**2).mean(axis=(2, 3))
    return np.concatenate([m, v, energy], axis=1)


def random_conv_weights(channels: int, seed: int = 0) -> list[np.ndarray]:
    rng = make_rng(seed, FEATURES, channels)
    ws, cin = [], channels
    for cout in RANDOM_CONV_WIDTHS:
        ws.append(rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9)))
        cin = cout
    return ws


def fixed_random_conv(images: np.ndarray, seed: int = 0) -> np.ndarray:
    """Two frozen 3x3 conv + ReLU layers, then spatial mean of the last layer."""
    h = images
    for w in random_conv_weights(images.shape[1], seed):
        h = np.maximum(conv2d(h, w, padding=1).data, 0.0)
    return h.mean(axis=(2, 3))


def extract_features(images, extractor: str = DEFAULT_EXTRACTOR, seed: int = 0) -> np.ndarray:
    images = _check_batch(images)
    if extractor == "raw_pixels":
        return images.reshape(len(images), -1).copy()
    if extractor == "pooled_stats":
        return pooled_stats(images)
    if extractor == "fixed_random_conv":
        return fixed_random_conv(images, seed)
    raise ConfigurationError(f"unknown feature extractor {extractor!r}; choose from {', '.join(EXTRACTORS)}")


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @classmethod
    def from_features(cls, feats) -> "FeatureStats":
        f = np.asarray(feats, dtype=np.float64)
        if f.ndim != 2 or len(f) < 2:
            raise ContractViolation(f"need a [N>=2, d] feature matrix, got shape {f.shape}")
        mu = f.mean(axis=0)
        c = f - mu
        cov = c.T @ c / (len(f) - 1)
        return cls(mu, 0.5 * (cov + cov.T), len(f))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def regularised(self, scale: float = RIDGE_SCALE) -> tuple["FeatureStats", float]:
        """Copy with ``eps * I`` added, ``eps = scale * trace / d``; returns ``(stats, eps)``."""
        eps = scale * float(np.trace(self.covariance)) / self.dim
        return FeatureStats(self.mean, self.covariance + eps * np.eye(self.dim), self.count), eps


def psd_sqrt(m, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric PSD square root via an eigendecomposition.

    Eigenvalues down to ``-tol * max(1, largest)`` are treated as zero; more
    negative ones (or an asymmetric input) raise :class:`ContractViolation`.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"psd_sqrt expects a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if not np.all(np.isfinite(m)) or np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise ContractViolation("psd_sqrt: matrix is not finite and symmetric")
    lam, vec = np.linalg.eigh(0.5 * (m + m.T))
    top = max(1.0, float(lam[-1]))
    if lam[0] < -tol * top:
        cond = float(np.abs(lam).max() / max(np.abs(lam).min(), np.finfo(float).tiny))
        raise ContractViolation(
            f"psd_sqrt: matrix is not positive semi-definite (min eigenvalue {lam[0]:.3e}, "
            f"max {lam[-1]:.3e}, condition number {cond:.3e})"
        )
    root = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T
    return 0.5 * (root + root.T)


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The cross term uses ``tr sqrt(sqrt(S_a) S_b sqrt(S_a))``, which has the
    same value and keeps every factor symmetric. Round-off below zero is
    reported as 0.
    """
    if a.dim != b.dim:
        raise ContractViolation(f"feature dimensions differ: {a.dim} vs {b.dim}")
    ra = psd_sqrt(a.covariance)
    inner = ra @ b.covariance @ ra
    cross = np.trace(psd_sqrt(0.5 * (inner + inner.T), tol=1e-8))
    d = a.mean - b.mean
    val = float(d @ d + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)
    return max(val, 0.0)


@dataclass(frozen=True)
class FidResult:
    fid: float
    n_real: int
    n_gen: int
    ridge_real: float
    ridge_gen: float


def fid(real, gen, extractor: str = DEFAULT_EXTRACTOR, seed: int = 0) -> FidResult:
    """FID-lite between two image batches, with the covariance ridge applied to both sides."""
    real, gen = _check_batch(real), _check_batch(gen)
    if real.shape[1:] != gen.shape[1:]:
        raise ContractViolation(f"image sizes differ: real {real.shape[1:]} vs generated {gen.shape[1:]}")
    sa, ea = FeatureStats.from_features(extract_features(real, extractor, seed)).regularised()
    sb, eb = FeatureStats.from_features(extract_features(gen, extractor, seed)).regularised()
    return FidResult(frechet_distance(sa, sb), len(real), len(gen), ea, eb)


def format_report_row(direction: str, extractor: str, res: FidResult) -> str:
    return f"{direction}, {extractor}, {res.n_real}, {res.n_gen}, {res.fid:.10g}"


def fid_report(real_dir, gen_dir, extractor: str = DEFAULT_EXTRACTOR, out_path=None, direction: str = "A2B", channels: int = 1, seed: int = 0) -> FidResult:
    """Score two image folders and write a one-row report.

    Report lines starting with ``#`` carry the ridge values and any skipped
    files; the data row is ``direction, extractor, N_real, N_gen, FID``.
    """
    if extractor not in EXTRACTORS:
        raise ConfigurationError(f"unknown feature extractor {extractor!r}; choose from {', '.join(EXTRACTORS)}")
    skipped_real, skipped_gen = [], []
    real = load_folder(real_dir, None, channels, skipped=skipped_real)
    gen = load_folder(gen_dir, None, channels, skipped=skipped_gen)
    res = fid(real.images, gen.images, extractor, seed)
    if out_path is not None:
        lines = [f"# covariance ridge eps = {RIDGE_SCALE:g} * trace / d: real {res.ridge_real:.6g}, generated {res.ridge_gen:.6g}"]
        if skipped_real or skipped_gen:
            lines.append(f"# skipped unreadable: real [{', '.join(skipped_real)}], generated [{', '.join(skipped_gen)}]")
        lines.append("# direction, extractor, N_real, N_gen, FID")
        lines.append(format_report_row(direction, extractor, res))
        out = Path(out_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("\n".join(lines) + "\n")
    return res
