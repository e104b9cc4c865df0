"""
Raw-tensor dataset files ("CFTD") and the synthetic fixtures built on them.

Layout, all little-endian:
    b"CFTD"
    u32 version=1, N, C, H, W, num_classes, n_val
    N*C*H*W float32 image values
    N u16 labels
    n_val u32 validation indices
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from src.errors import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"CFTD"
VERSION = 1
HEADER_FIELDS = ("version", "N", "C", "H", "W", "num_classes", "n_val")
HEADER_SIZE = len(MAGIC) + 4 * len(HEADER_FIELDS)


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    val_idx: np.ndarray
    train_idx: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.train_idx is None:
            mask = np.ones(len(self.labels), dtype=bool)
            mask[self.val_idx] = False
            object.__setattr__(self, "train_idx", np.flatnonzero(mask))
        for array in (self.images, self.labels, self.val_idx, self.train_idx):
            array.setflags(write=False)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(int(d) for d in self.images.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)


def load_dataset(path: Union[str, Path]) -> Dataset:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError(0, f"bad magic {data[:len(MAGIC)]!r}")
    if len(data) < HEADER_SIZE:
        raise FormatError(len(data), "truncated header")
    header = dict(zip(HEADER_FIELDS, np.frombuffer(data, dtype="<u4", count=len(HEADER_FIELDS),
                                                   offset=len(MAGIC)).tolist()))
    if header["version"] != VERSION:
        raise FormatError(len(MAGIC), f"unsupported version {header['version']}")
    n, c, h, w = header["N"], header["C"], header["H"], header["W"]
    classes, n_val = header["num_classes"], header["n_val"]
    if min(c, h, w, classes) < 1:
        raise FormatError(len(MAGIC) + 8, "dimensions and class count must be positive")
    if n_val > n:
        raise FormatError(len(MAGIC) + 24, f"n_val {n_val} exceeds N {n}")

    images_at = HEADER_SIZE
    labels_at = images_at + 4 * n * c * h * w
    val_at = labels_at + 2 * n
    end = val_at + 4 * n_val
    if len(data) < end:
        raise FormatError(len(data), f"truncated: expected {end} bytes")
    if len(data) > end:
        raise FormatError(end, f"{len(data) - end} trailing bytes")

    images = np.frombuffer(data, dtype="<f4", count=n * c * h * w, offset=images_at)
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=labels_at)
    val_idx = np.frombuffer(data, dtype="<u4", count=n_val, offset=val_at)

    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        raise FormatError(labels_at + 2 * int(bad[0]), f"label {labels[bad[0]]} outside [0, {classes})")
    bad = np.flatnonzero(val_idx >= n)
    if bad.size:
        raise FormatError(val_at + 4 * int(bad[0]), f"validation index {val_idx[bad[0]]} outside [0, {n})")
    _, first = np.unique(val_idx, return_index=True)
    if len(first) != n_val:
        repeated = sorted(set(range(n_val)) - set(first.tolist()))[0]
        raise FormatError(val_at + 4 * repeated, f"validation index {val_idx[repeated]} repeated")

    logger.debug("loaded %s: N=%d %dx%dx%d, %d classes, %d validation", path, n, c, h, w, classes, n_val)
    return Dataset(
        images=images.reshape(n, c, h, w).astype(np.float32),
        labels=labels.astype(np.int64),
        num_classes=classes,
        val_idx=val_idx.astype(np.int64),
    )


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    n, (c, h, w) = len(dataset), dataset.input_shape
    header = np.array([VERSION, n, c, h, w, dataset.num_classes, len(dataset.val_idx)], dtype="<u4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(dataset.images, dtype="<f4").tobytes())
        f.write(np.asarray(dataset.labels, dtype="<u2").tobytes())
        f.write(np.asarray(dataset.val_idx, dtype="<u4").tobytes())
    return path


def generate_toy100(seed: int = 0, n: int = 1000, shape=(3, 32, 32), num_classes: int = 100,
                    n_val: int = 200, path: Optional[Union[str, Path]] = None) -> Dataset:
    """
    Synthetic 100-class stand-in for CIFAR-100: one smooth random prototype per
    class plus per-sample Gaussian noise, balanced labels, fixed seed.
    """
    rng = np.random.default_rng(seed)
    c, h, w = shape
    if min(c, h, w) <= 0 or num_classes <= 0:
        raise FormatError(0, f"shape {tuple(shape)} and {num_classes} classes must be positive")
    # 8x8 cells, the last row and column of cells cropped
    coarse = rng.standard_normal((num_classes, c, -(-h // 8), -(-w // 8)))
    prototypes = np.repeat(np.repeat(coarse, 8, axis=2), 8, axis=3)[:, :, :h, :w]
    labels = rng.permutation(np.arange(n) % num_classes)
    images = prototypes[labels] + 0.8 * rng.standard_normal((n, c, h, w))
    dataset = Dataset(
        images=images.astype(np.float32),
        labels=labels.astype(np.int64),
        num_classes=num_classes,
        val_idx=np.sort(rng.permutation(n)[:n_val]).astype(np.int64),
    )
    if path is not None:
        save_dataset(dataset, path)
    return dataset


def make_blob_dataset(seed: int = 0, n: int = 256, shape=(1, 8, 8), n_val: int = 64,
                      separation: float = 1.0) -> Dataset:
    """Two linearly separable classes: constant images at -separation / +separation plus noise"""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2)
    centers = np.where(labels == 1, separation, -separation).reshape(n, 1, 1, 1)
    images = centers + 0.5 * rng.standard_normal((n,) + tuple(shape))
    return Dataset(
        images=images.astype(np.float32),
        labels=labels.astype(np.int64),
        num_classes=2,
        val_idx=np.sort(rng.permutation(n)[:n_val]).astype(np.int64),
    )
