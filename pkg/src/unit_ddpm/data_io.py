"""Image folders in and out, plus synthetic domain pairs with known mappings.

Pixels are stored as float64 in ``[-1, 1]`` via ``p / 127.5 - 1`` and written
back with round-half-up quantisation, ``floor((x + 1) * 127.5 + 0.5)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigurationError, ContractViolation
from .numeric.rng import DATA, make_rng

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".ppm", ".pgm", ".webp"}
SYNTH_KINDS = ("invert", "shift_bright", "blobs_to_edges")


@dataclass
class ImageDataset:
    """Stacked images ``[N, C, H, W]`` in ``[-1, 1]`` with their source names."""

    images: np.ndarray
    names: list[str] = field(default_factory=list)
    domain_tag: str = "A"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ContractViolation(f"dataset images must be [N,C,H,W], got shape {self.images.shape}")
        if not self.names:
            self.names = [f"{self.domain_tag}_{i:05d}" for i in range(len(self.images))]
        if len(self.names) != len(self.images):
            raise ContractViolation(f"{len(self.names)} names for {len(self.images)} images")
        if self.domain_tag not in ("A", "B"):
            raise ContractViolation(f"domain_tag must be 'A' or 'B', got {self.domain_tag!r}")
        if self.images.size and not (np.all(self.images >= -1.0) and np.all(self.images <= 1.0)):
            raise ContractViolation("dataset values must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i) -> np.ndarray:
        return self.images[i]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


# --- folders ---------------------------------------------------------------------


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def to_bytes(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("cannot quantise non-finite pixel values")
    return np.clip(np.floor((x + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def list_images(path) -> list[Path]:
    path = Path(path)
    if not path.is_dir():
        raise ConfigurationError(f"image folder not found: {path}")
    return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def decode_image(path, size: int | None, channels: int) -> np.ndarray:
    """Decode one file to ``[C, size, size]`` in ``[-1, 1]`` (native size when ``size`` is None).

    Resizing is bilinear. With ``channels=1`` colour images are averaged over
    their RGB channels; with ``channels=3`` grey images are replicated.
    """
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float64)  # H, W, 3
    if channels == 1:
        arr = arr.mean(axis=2, keepdims=True)
    return to_unit_range(arr.transpose(2, 0, 1))


def load_folder(path, size: int | None, channels: int = 1, domain_tag: str = "A", skipped: list | None = None) -> ImageDataset:
    """Load every decodable image in ``path`` (sorted by file name).

    ``size=None`` keeps native dimensions, which must then agree across
    files. Names of undecodable files are appended to ``skipped`` if given.
    """
    if channels not in (1, 3):
        raise ConfigurationError(f"channels must be 1 or 3, got {channels}")
    if size is not None and size < 1:
        raise ConfigurationError(f"image size must be positive, got {size}")
    items, names = [], []
    skipped = [] if skipped is None else skipped
    for p in list_images(path):
        try:
            items.append(decode_image(p, size, channels))
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            log.warning("skipping undecodable image %s: %s", p, exc)
            skipped.append(p.name)
            continue
        names.append(p.stem)
    if not items:
        raise ConfigurationError(f"no decodable images in {path}" + (f" (skipped: {', '.join(skipped)})" if skipped else ""))
    shapes = {a.shape for a in items}
    if len(shapes) > 1:
        raise ContractViolation(f"images in {path} have differing sizes: {sorted(shapes)}")
    return ImageDataset(np.stack(items), names, domain_tag)


def save_images(batch, out_dir, prefix: str = "", names=None, suffix: str = "") -> list[Path]:
    """Write each ``[C,H,W]`` item of ``batch`` as an 8-bit PNG; returns the paths."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1] not in (1, 3):
        raise ContractViolation(f"save_images expects [N,1|3,H,W], got {batch.shape}")
    if names is not None and len(names) != len(batch):
        raise ContractViolation(f"{len(names)} names for {len(batch)} images")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, item in enumerate(batch):
        stem = names[i] if names is not None else f"{i:05d}"
        px = to_bytes(item)
        img = Image.fromarray(px[0], mode="L") if px.shape[0] == 1 else Image.fromarray(px.transpose(1, 2, 0), mode="RGB")
        p = out_dir / f"{prefix}{stem}{suffix}.png"
        img.save(p, format="PNG")
        paths.append(p)
    return paths


# --- synthetic domains -------------------------------------------------------------


def _grid(size: int):
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="ij")


def soft_blobs(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Dark images with 1-3 bright Gaussian spots, ``[n, 1, size, size]``."""
    yy, xx = _grid(size)
    out = np.empty((n, 1, size, size))
    for i in range(n):
        img = np.zeros((size, size))
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.15, 0.85, 2)
            r = rng.uniform(0.08, 0.22)
            amp = rng.uniform(0.6, 1.0)
            img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        out[i, 0] = np.clip(2.0 * img - 1.0, -1.0, 1.0)
    return out


def filled_blobs(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Binary images (+1 inside a union of 1-3 discs, -1 outside)."""
    yy, xx = _grid(size)
    out = np.full((n, 1, size, size), -1.0)
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 4)):
            cy, cx = rng.uniform(0.2, 0.8, 2)
            r = rng.uniform(0.1, 0.25)
            mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        out[i, 0][mask] = 1.0
    return out


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_SCALE = 8.0  # largest |Sobel| response for inputs in [-1, 1]


def edge_map(x: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude with edge-replicated borders, mapped to ``[-1, 1]``."""
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape[-2:]
    p = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            win = p[..., i:i + H, j:j + W]
            gx += SOBEL_X[i, j] * win
            gy += SOBEL_X[j, i] * win
    mag = np.minimum(np.hypot(gx, gy) / SOBEL_SCALE, 1.0)
    return 2.0 * mag - 1.0


def invert_oracle(x):
    return -np.asarray(x, dtype=np.float64)


def shift_bright_oracle(x):
    return np.clip(np.asarray(x, dtype=np.float64) + 0.5, -1.0, 1.0)


def make_synthetic_domains(kind: str, n: int, size: int, seed: int, split: str = "train") -> tuple[ImageDataset, ImageDataset, Callable]:
    """Unpaired domain samples plus the ground-truth A->B map (for evaluation only).

    The two domains come from independent random streams, so image ``i`` of B
    is not the image of image ``i`` of A. ``split="test"`` draws from two
    further streams, disjoint from the training ones.
    """
    if split not in ("train", "test"):
        raise ConfigurationError(f"split must be 'train' or 'test', got {split!r}")
    if kind not in SYNTH_KINDS:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {', '.join(SYNTH_KINDS)}")
    if n < 2:
        raise ConfigurationError(f"synthetic set size must be >= 2, got {n}")
    if size < 3:
        raise ConfigurationError(f"synthetic image size must be >= 3, got {size}")
    base = 0 if split == "train" else 2
    rngA = make_rng(seed, DATA, base)
    rngB = make_rng(seed, DATA, base + 1)
    if kind == "invert":
        a, b, oracle = soft_blobs(rngA, n, size), invert_oracle(soft_blobs(rngB, n, size)), invert_oracle
    elif kind == "shift_bright":
        # A lives in [-1, 0.5] so the shift stays inside the range
        a = 0.75 * soft_blobs(rngA, n, size) - 0.25
        b = shift_bright_oracle(0.75 * soft_blobs(rngB, n, size) - 0.25)
        oracle = shift_bright_oracle
    else:
        a, b, oracle = filled_blobs(rngA, n, size), edge_map(filled_blobs(rngB, n, size)), edge_map
    names = [f"{i:05d}" for i in range(n)]
    return ImageDataset(a, list(names), "A"), ImageDataset(b, list(names), "B"), oracle
