"""Dataset ingestion: IDX files, a synthetic corpus, and rotation augmentation."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..attention import bilinear_sample, affine_grid, rotation_affine

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (count, channels, H, W) in [0, 1]
    labels: np.ndarray | None
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim == 3:
            self.images = self.images[:, None]
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ValueError("label count differs from image count")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, count: int | None = None, start: int = 0) -> "Dataset":
        stop = len(self) if count is None else start + count
        labels = None if self.labels is None else self.labels[start:stop]
        return Dataset(self.images[start:stop], labels, self.split)

    def split_off(self, fraction: float) -> tuple["Dataset", "Dataset"]:
        """Hold out the last ``fraction`` of samples."""
        n_val = int(round(len(self) * fraction))
        cut = len(self) - n_val
        head, tail = self.subset(cut), self.subset(None, cut)
        tail.split = "val"
        return head, tail


def read_idx(path: str) -> np.ndarray:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: too short for an IDX header")
    zero, dtype_code, rank = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in IDX_TYPES:
        raise IdxFormatError(f"{path}: bad magic {raw[:4].hex()}")
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    dtype = IDX_TYPES[dtype_code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise IdxFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def load_idx(path: str, kind: str | None = None) -> np.ndarray:
    """Parse an IDX file; unsigned-byte images are scaled to [0, 1].

    ``kind`` of 'images' or 'labels' enforces rank 3 or 1.
    """
    arr = read_idx(path)
    if kind == "images":
        if arr.ndim != 3:
            raise IdxFormatError(f"{path}: image files have rank 3, got {arr.ndim}")
        return arr.astype(np.float64) / 255.0
    if kind == "labels":
        if arr.ndim != 1:
            raise IdxFormatError(f"{path}: label files have rank 1, got {arr.ndim}")
        return arr.astype(np.int64)
    return arr


def _find(data_dir: str, name: str) -> str:
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
        path = os.path.join(data_dir, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{name} not found in {data_dir}")


def load_mnist(data_dir: str, split: str = "train") -> Dataset:
    image_name, label_name = MNIST_FILES[split]
    images = load_idx(_find(data_dir, image_name), "images")
    labels = load_idx(_find(data_dir, label_name), "labels")
    if len(images) != len(labels):
        raise IdxFormatError("image and label counts differ")
    return Dataset(images, labels, split)


def synth_dataset(kind: str = "quadrant", count: int = 400, seed: int = 0, size: int = 28) -> Dataset:
    """Deterministic toy corpus.

    ``quadrant``: a filled box in one of four quadrants (class = quadrant).
    ``bars``: a horizontal or vertical bar (class = orientation).
    Labels cycle through the classes, so counts are balanced within one.
    """
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    n_classes = {"quadrant": 4, "bars": 2}.get(kind)
    if n_classes is None:
        raise ValueError(f"unknown synthetic corpus {kind!r}")
    labels = np.arange(count) % n_classes
    labels = labels[rng.permutation(count)]
    images = np.zeros((count, 1, size, size))
    half = size // 2
    for i, label in enumerate(labels):
        if kind == "quadrant":
            side = int(rng.integers(max(2, size // 6), max(3, size // 3)))
            r0 = (half if label >= 2 else 0) + int(rng.integers(1, max(2, half - side)))
            c0 = (half if label % 2 else 0) + int(rng.integers(1, max(2, half - side)))
            images[i, 0, r0:r0 + side, c0:c0 + side] = rng.uniform(0.6, 1.0)
        else:
            length = int(rng.integers(size // 2, size - 2))
            width = int(rng.integers(1, max(2, size // 8)))
            start = int(rng.integers(1, size - length))
            offset = int(rng.integers(1, size - width - 1))
            value = rng.uniform(0.6, 1.0)
            if label == 0:
                images[i, 0, offset:offset + width, start:start + length] = value
            else:
                images[i, 0, start:start + length, offset:offset + width] = value
    return Dataset(images, labels.astype(np.int64), "synth")


def rotate(images: np.ndarray, angles_rad: np.ndarray) -> np.ndarray:
    """Rotate (B, C, H, W) images about their centre with zero padding."""
    affines = np.stack([rotation_affine(a) for a in np.atleast_1d(angles_rad)])
    h, w = images.shape[2:]
    grid = affine_grid(affines, h, w)
    return bilinear_sample(images, grid).data


def augment(images: np.ndarray, rng: np.random.Generator, max_degrees: float = 20.0) -> np.ndarray:
    """Random rotation drawn uniformly from [-max_degrees, +max_degrees]."""
    angles = np.deg2rad(rng.uniform(-max_degrees, max_degrees, size=len(images)))
    return np.clip(rotate(images, angles), 0.0, 1.0)
