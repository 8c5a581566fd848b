"""MNIST IDX parsing, normalization and the baseline/pool split.

IDX layout (all header integers big-endian uint32)::

    images: 0x00000803, n, rows, cols, then n*rows*cols unsigned bytes
    labels: 0x00000801, n, then n unsigned bytes
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from semguard.errors import (
    BaselineTooLarge,
    CountMismatch,
    DataError,
    LabelOutOfRange,
    TruncatedFile,
    WrongMagic,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_PIXELS = 28 * 28
N_CLASSES = 10


def _read_header(data: bytes, magic: int, n_dims: int) -> tuple[int, ...]:
    size = 4 * (1 + n_dims)
    if len(data) < size:
        raise TruncatedFile(f"header needs {size} bytes, got {len(data)}")
    found, *dims = struct.unpack(f">{1 + n_dims}I", data[:size])
    if found != magic:
        raise WrongMagic(f"expected magic 0x{magic:08x}, got 0x{found:08x}")
    return tuple(dims)


def parse_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX3 image file into a ``(n, rows, cols)`` uint8 array."""
    n, rows, cols = _read_header(data, IMAGE_MAGIC, 3)
    need = n * rows * cols
    payload = memoryview(data)[16:]
    if len(payload) < need:
        raise TruncatedFile(f"header declares {n} images ({need} bytes), payload has {len(payload)}")
    return np.frombuffer(payload[:need], dtype=np.uint8).reshape(n, rows, cols).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX1 label file into a 1-D uint8 array of digits."""
    (n,) = _read_header(data, LABEL_MAGIC, 1)
    payload = memoryview(data)[8:]
    if len(payload) < n:
        raise TruncatedFile(f"header declares {n} labels, payload has {len(payload)}")
    labels = np.frombuffer(payload[:n], dtype=np.uint8).copy()
    if labels.size and labels.max() >= N_CLASSES:
        bad = int(labels[labels >= N_CLASSES][0])
        raise LabelOutOfRange(f"label {bad} outside 0..{N_CLASSES - 1}")
    return labels


def encode_idx_images(grids: np.ndarray) -> bytes:
    grids = np.asarray(grids, dtype=np.uint8)
    n, rows, cols = grids.shape
    return struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + grids.tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes()


@dataclass(frozen=True)
class Dataset:
    """Normalized images, one row of 784 pixels in [0, 1] per sample."""

    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.labels.shape[0]:
            raise CountMismatch(
                f"pixels {self.pixels.shape} and labels {self.labels.shape} disagree"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.pixels[idx], self.labels[idx])


def normalize(grids: np.ndarray) -> np.ndarray:
    grids = np.asarray(grids)
    return grids.reshape(grids.shape[0], -1).astype(np.float64) / 255.0


def load_dataset(image_path: str | Path, label_path: str | Path) -> Dataset:
    try:
        image_bytes = Path(image_path).read_bytes()
        label_bytes = Path(label_path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from exc
    grids = parse_idx_images(image_bytes)
    labels = parse_idx_labels(label_bytes)
    if grids.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{grids.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(normalize(grids), labels.astype(np.int64))


@dataclass(frozen=True)
class DatasetSplit:
    baseline: Dataset
    pool: Dataset
    baseline_index: np.ndarray
    pool_index: np.ndarray
    seed: int


def split(dataset: Dataset, baseline_size: int, seed: int) -> DatasetSplit:
    """Seeded shuffle; the first ``baseline_size`` samples form the trusted baseline."""
    if baseline_size < 0 or baseline_size > len(dataset):
        raise BaselineTooLarge(
            f"baseline_size {baseline_size} not in [0, {len(dataset)}]"
        )
    order = np.random.default_rng(seed).permutation(len(dataset))
    base_idx = order[:baseline_size]
    pool_idx = order[baseline_size:]
    return DatasetSplit(
        baseline=dataset.subset(base_idx),
        pool=dataset.subset(pool_idx),
        baseline_index=base_idx,
        pool_index=pool_idx,
        seed=seed,
    )
