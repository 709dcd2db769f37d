"""MNIST IDX and CIFAR-10 binary ingestion with deterministic train/val splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3*32*32 pixels


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Immutable image/label batch.  Pixels are raw uint8 codes 0-255."""

    images: np.ndarray  # (N, C, H, W) uint8
    labels: np.ndarray  # (N,) int64
    split: str = "train"

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.uint8)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.shape[0] != labels.shape[0]:
            raise DatasetFormatError(
                f"{images.shape[0]} images vs {labels.shape[0]} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() > 9):
            raise DatasetFormatError("labels must be class indices 0-9")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_exact(f, n: int, what: str, offset: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DatasetFormatError(
            f"truncated {what}: wanted {n} bytes at offset {offset}, got {len(data)}"
        )
    return data


def load_mnist_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse the big-endian IDX pair (magics 2051 / 2049)."""
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "IDX header", 0))
        if magic != IDX_IMAGES_MAGIC:
            raise DatasetFormatError(
                f"images magic {magic}, expected {IDX_IMAGES_MAGIC}"
            )
        pixels = _read_exact(f, n * rows * cols, "IDX pixel data", 16)
        if f.read(1):
            raise DatasetFormatError("trailing bytes after IDX pixel data")
    with open(labels_path, "rb") as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, "IDX label header", 0))
        if magic != IDX_LABELS_MAGIC:
            raise DatasetFormatError(
                f"labels magic {magic}, expected {IDX_LABELS_MAGIC}"
            )
        label_bytes = _read_exact(f, n_labels, "IDX label data", 8)
    if n != n_labels:
        raise DatasetFormatError(f"image count {n} != label count {n_labels}")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(n, 1, rows, cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(images, labels, split)


def save_mnist_idx(d: Dataset, images_path, labels_path) -> None:
    """Serialize back to IDX; inverse of load_mnist_idx."""
    n, _, rows, cols = d.images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(d.images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(d.labels.astype(np.uint8).tobytes())


def load_cifar10_bin(paths, split: str = "train") -> Dataset:
    """Concatenate CIFAR-10 binary batches (3073-byte records, channel-major RGB)."""
    all_images, all_labels = [], []
    for path in paths:
        data = Path(path).read_bytes()
        if len(data) % CIFAR_RECORD_BYTES:
            raise DatasetFormatError(
                f"{path}: length {len(data)} not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        if labels.size and labels.max() > 9:
            bad = int(np.argmax(labels > 9))
            raise DatasetFormatError(
                f"{path}: record {bad} has label {labels[bad]} > 9"
            )
        all_images.append(records[:, 1:].reshape(-1, 3, 32, 32))
        all_labels.append(labels.astype(np.int64))
    return Dataset(np.concatenate(all_images), np.concatenate(all_labels), split)


def split_train_val(d: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split; disjoint and exhaustive."""
    if not (0.0 < val_fraction < 1.0):
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(d)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (
        Dataset(d.images[train_idx], d.labels[train_idx], "train"),
        Dataset(d.images[val_idx], d.labels[val_idx], "val"),
    )


def find_mnist(data_dir) -> dict[str, Path] | None:
    """Locate the four standard MNIST files under a directory, if present."""
    data_dir = Path(data_dir)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    found = {}
    for key, stem in names.items():
        candidates = [data_dir / stem, data_dir / (stem + ".idx")]
        hit = next((c for c in candidates if c.is_file()), None)
        if hit is None:
            return None
        found[key] = hit
    return found
