"""Dataset containers and bit-exact readers for IDX and CIFAR-10 binaries."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IoError, ShapeError
from .rng import RandomStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

__all__ = [
    "Dataset",
    "load_idx",
    "write_idx",
    "load_cifar10",
    "write_cifar10",
    "synth_two_template",
    "load_mnist",
]


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # float32 (N, C, H, W) in [0, 1]
    labels: np.ndarray  # int64 (N,)
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ShapeError(f"images must be N x C x H x W, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ShapeError("images and labels disagree on N")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ShapeError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, index, name: str | None = None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], self.num_classes,
                       self.name if name is None else name)

    def of_class(self, c: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == c))

    def class_means(self) -> np.ndarray:
        """Per-class mean image, shape (K, C, H, W); empty classes are zero."""
        out = np.zeros((self.num_classes,) + self.shape, dtype=np.float64)
        for c in range(self.num_classes):
            sel = self.labels == c
            if sel.any():
                out[c] = self.images[sel].mean(axis=0, dtype=np.float64)
        return out


def _read_bytes(path) -> bytes:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise IoError(f"no such file: {path}") from exc
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise IoError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IoError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise IoError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    if len(raw) > header + count:
        raise FormatError(f"{path}: {len(raw) - header - count} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def _to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(255.0)


def load_idx(images_path, labels_path, num_classes: int = 10, name: str = "idx") -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into a Dataset."""
    pix = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    lab = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if pix.shape[0] != lab.shape[0]:
        raise FormatError(f"{pix.shape[0]} images but {lab.shape[0]} labels")
    if lab.size and lab.max() >= num_classes:
        raise FormatError(f"label {lab.max()} >= num_classes {num_classes}")
    images = _to_unit(pix)[:, None, :, :]
    return Dataset(images, lab.astype(np.int64), num_classes, name)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as an uncompressed IDX pair."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise ShapeError("IDX images are single-channel")
    pix = np.rint(dataset.images[:, 0] * 255.0).clip(0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + pix.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def load_cifar10(batch_paths, name: str = "cifar10") -> Dataset:
    """Read CIFAR-10 binary batches: 1 label byte + 3072 planar RGB bytes per record."""
    if isinstance(batch_paths, (str, Path)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for p in batch_paths:
        raw = _read_bytes(p)
        if len(raw) % CIFAR_RECORD:
            raise FormatError(f"{p}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec.shape[0] and rec[:, 0].max() > 9:
            raise FormatError(f"{p}: label byte {rec[:, 0].max()} > 9")
        labels.append(rec[:, 0].astype(np.int64))
        images.append(_to_unit(rec[:, 1:]).reshape(-1, 3, 32, 32))
    if not images:
        raise ConfigError("no CIFAR-10 batch files given")
    return Dataset(np.concatenate(images), np.concatenate(labels), 10, name)


def write_cifar10(dataset: Dataset, path) -> None:
    if dataset.shape != (3, 32, 32):
        raise ShapeError("CIFAR-10 records are 3 x 32 x 32")
    pix = np.rint(dataset.images.reshape(len(dataset), -1) * 255.0).clip(0, 255).astype(np.uint8)
    rec = np.concatenate([dataset.labels.astype(np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(rec.tobytes())


def load_mnist(root, split: str = "train") -> Dataset:
    """Convenience wrapper for the standard MNIST file names under ``root``."""
    prefix = {"train": "train", "test": "t10k"}[split]
    root = Path(root)

    def find(stem):
        for cand in (root / stem, root / f"{stem}.gz"):
            if cand.exists():
                return cand
        raise IoError(f"missing MNIST file {root / stem}")

    return load_idx(find(f"{prefix}-images-idx3-ubyte"), find(f"{prefix}-labels-idx1-ubyte"),
                    name=f"mnist-{split}")


def bar_templates(h: int, w: int) -> np.ndarray:
    """Vertical (class 0) and horizontal (class 1) bar images, shape (2, h, w)."""
    t = np.zeros((2, h, w), dtype=np.float32)
    bw, bh = max(1, w // 4), max(1, h // 4)
    c0 = (w - bw) // 2
    r0 = (h - bh) // 2
    t[0, :, c0:c0 + bw] = 1.0
    t[1, r0:r0 + bh, :] = 1.0
    return t


def synth_two_template(h: int, w: int, n_per_class: int, noise_sd: float, seed: int) -> Dataset:
    """Two linearly separable classes: a vertical bar and a horizontal bar plus clipped noise."""
    if h < 4 or w < 4:
        raise ShapeError("synthetic images need h, w >= 4")
    if n_per_class < 1:
        raise ShapeError("n_per_class must be positive")
    templates = bar_templates(h, w)
    n = 2 * n_per_class
    images = np.empty((n, 1, h, w), dtype=np.float32)
    labels = np.repeat(np.arange(2), n_per_class)
    for i in range(n):
        img = templates[labels[i]].astype(np.float64)
        if noise_sd > 0:
            img = img + RandomStream(seed, i).normal((h, w), 0.0, noise_sd)
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(images, labels.astype(np.int64), 2, "synth-two-template")
