"""IDX (MNIST / Fashion-MNIST) file loading."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ENV = "PCNN_DATA_DIR"

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
SPLIT_SIZES = {"train": 60000, "test": 10000}


class IdxError(ValueError):
    pass


class BadMagic(IdxError):
    pass


class TruncatedFile(IdxError):
    pass


class DimensionMismatch(IdxError):
    pass


def _read(path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx(path, kind: str) -> np.ndarray:
    """Images as (count, 784) floats in [0, 1]; labels as int64 class indices."""
    data = _read(path)
    if len(data) < 8:
        raise TruncatedFile(f"{path}: header truncated")
    magic, count = struct.unpack(">II", data[:8])
    if kind == "images":
        if magic != IMAGES_MAGIC:
            raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
        if len(data) < 16:
            raise TruncatedFile(f"{path}: header truncated")
        rows, cols = struct.unpack(">II", data[8:16])
        if (rows, cols) != (28, 28):
            raise DimensionMismatch(f"{path}: images are {rows}x{cols}, expected 28x28")
        need = 16 + count * rows * cols
        if len(data) < need:
            raise TruncatedFile(f"{path}: {len(data)} bytes, need {need}")
        pixels = np.frombuffer(data, np.uint8, count * rows * cols, 16)
        return pixels.reshape(count, rows * cols) / 255.0
    if kind == "labels":
        if magic != LABELS_MAGIC:
            raise BadMagic(f"{path}: magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
        if len(data) < 8 + count:
            raise TruncatedFile(f"{path}: {len(data)} bytes, need {8 + count}")
        labels = np.frombuffer(data, np.uint8, count, 8).astype(np.int64)
        if labels.size and labels.max() > 9:
            raise DimensionMismatch(f"{path}: label {labels.max()} outside 0-9")
        return labels
    raise ValueError(f"kind must be 'images' or 'labels', got {kind!r}")


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DimensionMismatch(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.split)


def data_root(root=None, dataset: str = "mnist") -> Path:
    if root is None:
        base = os.environ.get(DATA_ENV)
        if base is None:
            raise FileNotFoundError(f"no dataset root given and ${DATA_ENV} is unset")
        root = Path(base) / dataset
    return Path(root)


def load_split(root, split: str) -> Dataset:
    """Load ``split`` ('train' or 'test') from a directory of IDX files, .gz or raw."""
    if split not in SPLIT_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(root)
    paths = []
    for stem in SPLIT_FILES[split]:
        for cand in (root / f"{stem}.gz", root / stem):
            if cand.exists():
                paths.append(cand)
                break
        else:
            raise FileNotFoundError(f"{root}: missing {stem}[.gz]")
    ds = Dataset(load_idx(paths[0], "images"), load_idx(paths[1], "labels"), split)
    if len(ds) != SPLIT_SIZES[split]:
        raise DimensionMismatch(f"{split} split has {len(ds)} samples, expected {SPLIT_SIZES[split]}")
    return ds
