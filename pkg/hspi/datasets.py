"""Image datasets: a procedural 10-class texture set and the CIFAR-10 binary layout.

Images are uint8 arrays shaped (N, 3, H, W); models see them as ``pixels / 255``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hspi.config import parse_options
from hspi.errors import UsageError
from hspi.seeding import substream

logger = logging.getLogger(__name__)

CIFAR_RECORD = 1 + 3 * 32 * 32

# Per-class base colours of the texture set.
_PALETTE = np.array([
    [230, 60, 60], [60, 200, 70], [60, 90, 230], [220, 210, 60], [200, 70, 200],
    [60, 200, 210], [240, 140, 40], [130, 130, 130], [120, 60, 30], [250, 250, 250],
], dtype=np.float64)


@dataclass(frozen=True)
class Dataset:
    name: str
    images: np.ndarray   # uint8 (N, 3, H, W)
    labels: np.ndarray   # int64 (N,)
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def inputs(self) -> np.ndarray:
        return to_inputs(self.images)


def to_inputs(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 255.0


def synthetic_textures(n: int = 600, size: int = 16, seed: int = 0, num_classes: int = 10) -> Dataset:
    """Oriented colour gratings with per-sample phase, contrast and pixel noise."""
    if n < num_classes or size < 4 or not 2 <= num_classes <= len(_PALETTE):
        raise UsageError("bad-dataset", f"synthetic n={n} size={size} classes={num_classes}")
    rng = substream(seed, "dataset/synthetic")
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = np.empty((n, 3, size, size), dtype=np.uint8)
    for i, c in enumerate(labels):
        theta = np.pi * c / num_classes
        freq = 2 + c % 3
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        contrast = rng.uniform(0.3, 0.5)
        img = _PALETTE[c][:, None, None] * (1 - contrast + contrast * wave[None])
        img += rng.normal(0, 12, size=img.shape)
        images[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Dataset(f"synthetic:n={n},size={size},seed={seed}", images, labels.astype(np.int64), num_classes)


def two_blobs(n: int = 64, dim: int = 4, seed: int = 0) -> Dataset:
    """Two linearly separable clusters, as (N, dim, 1, 1) pixel images."""
    rng = substream(seed, "dataset/blobs")
    labels = np.arange(n) % 2
    centers = np.where(labels[:, None] == 0, 64.0, 192.0)
    pixels = np.clip(np.rint(centers + rng.normal(0, 16, size=(n, dim))), 0, 255).astype(np.uint8)
    return Dataset(f"blobs:n={n},dim={dim},seed={seed}", pixels.reshape(n, dim, 1, 1), labels.astype(np.int64), 2)


def load_cifar_binary(path: str | Path, limit: int | None = None) -> Dataset:
    """CIFAR-10 binary records (1 label byte + 3072 pixel bytes); ``path`` is a file or a directory of ``*.bin``."""
    path = Path(path)
    files = sorted(path.glob("*.bin")) if path.is_dir() else [path]
    if not files or not all(f.is_file() for f in files):
        raise UsageError("dataset-not-found", str(path))
    raw = b"".join(f.read_bytes() for f in files)
    if not raw or len(raw) % CIFAR_RECORD:
        raise UsageError("bad-dataset", f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    if limit is not None:
        records = records[:limit]
    logger.info("Loaded %d CIFAR records from %d file(s)", len(records), len(files))
    return Dataset(f"cifar:{path}", records[:, 1:].reshape(-1, 3, 32, 32).copy(),
                   records[:, 0].astype(np.int64), 10)


def load_dataset(source: str) -> Dataset:
    """``synthetic:n=600,size=16,seed=0`` | ``blobs:n=64`` | ``cifar:<path>[,limit=N]``."""
    kind, _, rest = source.partition(":")
    try:
        if kind == "synthetic":
            return synthetic_textures(**{k: int(v) for k, v in parse_options(rest).items()})
        if kind == "blobs":
            return two_blobs(**{k: int(v) for k, v in parse_options(rest).items()})
        if kind == "cifar":
            location, _, opts = rest.partition(",")
            limit = parse_options(opts).get("limit")
            return load_cifar_binary(location, int(limit) if limit else None)
    except (TypeError, ValueError) as exc:
        raise UsageError("bad-dataset", f"{source!r}: {exc}") from exc
    raise UsageError("bad-dataset", f"unknown dataset source {source!r}")
