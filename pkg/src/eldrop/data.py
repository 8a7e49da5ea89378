"""Datasets: IDX (MNIST) reading and writing, synthetic Gaussian classes, splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, FormatError
from .tensor import DATA_STREAM, RngStream

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    k: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2:
            raise DimensionError(f"inputs must be 2-d, got shape {self.inputs.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise DimensionError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise DomainError(f"labels must lie in [0, {self.k})")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.k)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.inputs, other.inputs]), np.concatenate([self.labels, other.labels]), max(self.k, other.k))


def _read_header(data: bytes, magic: int, ndim: int, path) -> tuple:
    need = 4 * (ndim + 1)
    if len(data) < need:
        raise FormatError(f"{path}: truncated header", len(data))
    (got,) = struct.unpack_from(">I", data, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got}, expected {magic}", 0)
    return struct.unpack_from(">" + "I" * ndim, data, 4)


def load_idx(images_path, labels_path, k: int | None = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255 and flattened row-major."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img = images_path.read_bytes()
    lab = labels_path.read_bytes()
    n, rows, cols = _read_header(img, IMAGE_MAGIC, 3, images_path)
    (n_labels,) = _read_header(lab, LABEL_MAGIC, 1, labels_path)
    if n != n_labels:
        raise FormatError(f"{images_path} holds {n} images but {labels_path} holds {n_labels} labels", 4)
    size = n * rows * cols
    if len(img) < 16 + size:
        raise FormatError(f"{images_path}: truncated pixel data, expected {size} bytes", len(img))
    if len(lab) < 8 + n:
        raise FormatError(f"{labels_path}: truncated label data, expected {n} bytes", len(lab))
    pixels = np.frombuffer(img, dtype=np.uint8, count=size, offset=16).reshape(n, rows * cols)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if k is None:
        k = int(labels.max()) + 1 if n else 1
    return Dataset(pixels.astype(np.float64) / 255.0, labels, k)


def write_idx(dataset: Dataset, images_path, labels_path, shape: tuple | None = None) -> None:
    """Write a dataset with inputs in [0, 1] as IDX; pixels are rounded to bytes."""
    n, d = dataset.inputs.shape
    rows, cols = shape if shape is not None else (1, d)
    if rows * cols != d:
        raise DimensionError(f"image shape {rows}x{cols} does not match dimension {d}")
    pixels = np.clip(np.rint(dataset.inputs * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes())


def synth_gaussians(k: int, d: int, n_per_class: int, separation: float, seed: int = 0) -> Dataset:
    """Isotropic unit-variance classes centred at ``separation * e_(c mod d)``.

    Coordinates are clipped to ``[-4, separation + 4]`` and mapped affinely
    onto [0, 1]; the map does not depend on the sample, so separately drawn
    datasets share one scale.
    """
    if k < 2 or d < 1:
        raise DomainError("need k >= 2 and d >= 1")
    rng = RngStream(seed, DATA_STREAM)
    labels = np.repeat(np.arange(k), n_per_class)
    centers = np.zeros((k, d))
    centers[np.arange(k), np.arange(k) % d] = separation
    raw = centers[labels] + rng.normal((labels.shape[0], d))
    lo, hi = -4.0, abs(separation) + 4.0
    if separation < 0:
        lo, hi = separation - 4.0, 4.0
    x = (np.clip(raw, lo, hi) - lo) / (hi - lo)
    order = rng.permutation(labels.shape[0])
    return Dataset(x[order], labels[order], k)


def split(ds: Dataset, holdout: int, seed: int = 0):
    """Shuffle deterministically and return ``(train, validation)`` with ``holdout`` validation examples."""
    if not 0 <= holdout < len(ds):
        raise DomainError(f"holdout {holdout} must be in [0, {len(ds)})")
    order = RngStream(seed, DATA_STREAM).child(1).permutation(len(ds))
    return ds.subset(order[holdout:]), ds.subset(order[:holdout])
