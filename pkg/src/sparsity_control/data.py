"""Datasets: MNIST IDX files and small synthetic 2-D problems."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IDXFormatError(ValueError):
    pass


class IDXMagicError(IDXFormatError):
    pass


class IDXTruncatedError(IDXFormatError):
    pass


class IDXLengthMismatchError(IDXFormatError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError("inputs and labels differ in length")

    def __len__(self):
        return len(self.y)

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if len(self.y) else 0

    def split(self, n_first):
        return Dataset(self.x[:n_first], self.y[:n_first]), Dataset(self.x[n_first:], self.y[n_first:])


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim, what):
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IDXTruncatedError(f"{what}: file shorter than the magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IDXMagicError(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IDXTruncatedError(f"{what}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IDXTruncatedError(f"{what}: payload has {len(raw) - header} bytes, header promises {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_mnist_idx(image_path, label_path) -> Dataset:
    """Parse a big-endian IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(image_path), IMAGE_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(label_path), LABEL_MAGIC, 1, "labels")
    if len(images) != len(labels):
        raise IDXLengthMismatchError(f"{len(images)} images but {len(labels)} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx(images, labels, image_path, label_path):
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(image_path).write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(label_path).write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes())


def find_mnist(directory, split="train"):
    """Locate an IDX pair in ``directory`` (plain or .gz); returns None when absent."""
    directory = Path(directory)
    found = []
    for stem in MNIST_FILES[split]:
        for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            if (directory / name).exists():
                found.append(directory / name)
                break
    return tuple(found) if len(found) == 2 else None


def synth_dataset(seed: int, n: int, kind: str = "blobs", separation: float = 10.0, noise: float = 0.1) -> Dataset:
    """Deterministic balanced 2-class 2-D data.

    ``blobs``: unit-variance Gaussians whose centres are ``separation``
    standard deviations apart. ``moons``: two interleaved half circles.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    if kind == "blobs":
        centers = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
        x = centers[y] + rng.standard_normal((n, 2))
    elif kind == "moons":
        t = rng.uniform(0.0, np.pi, n)
        outer = np.stack([np.cos(t), np.sin(t)], axis=1)
        inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        x = np.where(y[:, None] == 0, outer, inner) + noise * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown synthetic dataset {kind!r}")
    return Dataset(x, y)


def save_npz(path, ds: Dataset):
    np.savez(path, x=ds.x, y=ds.y)


def load_npz(path) -> Dataset:
    with np.load(path) as f:
        return Dataset(f["x"], f["y"])
