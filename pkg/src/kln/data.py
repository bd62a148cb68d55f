"""Dataset ingestion: IDX image/label files, synthetic blobs, and splits.

Pixels and features are always scaled to [0, 1]; no other preprocessing.
IDX files may be plain or gzip-compressed (detected by the .gz suffix).
"""

import gzip
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    TruncatedFileError,
)
from .linalg import as_matrix
from .rng import substream

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    x: np.ndarray                    # (n, D), float64 in [0, 1]
    y: Optional[np.ndarray]          # (n,) int64 labels in [0, n_classes)
    n_classes: int
    name: str = ""

    def __post_init__(self):
        self.x = as_matrix(self.x, "x")
        if np.min(self.x) < 0.0 or np.max(self.x) > 1.0:
            raise DataError("features must lie in [0, 1]")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.x.shape[0],):
                raise DataError(
                    f"label count {self.y.shape} does not match samples {self.x.shape}"
                )
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise DataError(
                    f"labels must be in [0, {self.n_classes}), got range "
                    f"[{self.y.min()}, {self.y.max()}]"
                )

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def labeled(self):
        return self.y is not None

    def subset(self, idx, name=None):
        return Dataset(
            x=self.x[idx],
            y=None if self.y is None else self.y[idx],
            n_classes=self.n_classes,
            name=self.name if name is None else name,
        )


def _open_maybe_gz(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, count, offset, what):
    data = f.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"truncated while reading {what}", offset + len(data))
    return data


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX image file into an (n, rows*cols) float64 array in [0, 1]."""
    with _open_maybe_gz(path) as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, 0, "image magic"))
        if magic != IMAGES_MAGIC:
            raise BadMagicError(
                f"bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}", 0
            )
        n, rows, cols = struct.unpack(">iii", _read_exact(f, 12, 4, "image dimensions"))
        if min(n, rows, cols) < 0:
            raise TruncatedFileError("negative dimension in image header", 4)
        payload = _read_exact(f, n * rows * cols, 16, "image payload")
        if f.read(1):
            raise TruncatedFileError("unexpected trailing bytes after image payload",
                                     16 + n * rows * cols)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, 0, "label magic"))
        if magic != LABELS_MAGIC:
            raise BadMagicError(
                f"bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}", 0
            )
        (n,) = struct.unpack(">i", _read_exact(f, 4, 4, "label count"))
        if n < 0:
            raise TruncatedFileError("negative count in label header", 4)
        payload = _read_exact(f, n, 8, "label payload")
        if f.read(1):
            raise TruncatedFileError("unexpected trailing bytes after label payload", 8 + n)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, n_classes=10, name="mnist") -> Dataset:
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if x.shape[0] != y.shape[0]:
        raise CountMismatchError(
            f"image count {x.shape[0]} does not match label count {y.shape[0]}", 4
        )
    return Dataset(x=x, y=y, n_classes=n_classes, name=name)


def save_idx_images(path, x, rows, cols):
    """Inverse of load_idx_images for [0,1]-scaled pixel rows."""
    x = as_matrix(x, "x")
    if x.shape[1] != rows * cols:
        raise DataError(f"width {x.shape[1]} does not match {rows}x{cols}")
    pixels = np.round(x * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGES_MAGIC, x.shape[0], rows, cols))
        f.write(pixels.tobytes())


def save_idx_labels(path, y):
    y = np.asarray(y)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABELS_MAGIC, y.shape[0]))
        f.write(y.astype(np.uint8).tobytes())


def synth_blobs(n_classes, per_class, dim, spread, seed) -> Dataset:
    """Gaussian blobs around simplex-like class means, min-max scaled to [0, 1].

    With dim >= n_classes the means are orthonormal (rotated standard basis),
    a regular simplex with pairwise distance sqrt(2); otherwise random unit
    vectors.  Fully deterministic per seed.
    """
    if n_classes < 2:
        raise DataError(f"need at least 2 classes, got {n_classes}")
    if per_class < 1:
        raise DataError(f"need at least 1 sample per class, got {per_class}")
    if dim < 1:
        raise DataError(f"need at least 1 feature, got {dim}")
    if spread < 0:
        raise DataError(f"spread must be non-negative, got {spread}")
    rng = substream(seed, "blobs")
    if dim >= n_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        means = q[:, :n_classes].T
    else:
        means = rng.standard_normal((n_classes, dim))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    y = np.repeat(np.arange(n_classes), per_class)
    x = means[y] + spread * rng.standard_normal((y.size, dim))
    lo = x.min(axis=0)
    span = np.maximum(x.max(axis=0) - lo, 1e-12)
    x = (x - lo) / span
    return Dataset(x=x, y=y, n_classes=n_classes, name=f"blobs{n_classes}x{per_class}d{dim}")


def split_labeled(ds: Dataset, n_labeled, seed):
    """Class-balanced labeled subset; the full set is returned unchanged as the
    unlabeled pool (the labeled set is a subset of it)."""
    if not ds.labeled:
        raise DataError("split_labeled needs a labeled dataset")
    c = ds.n_classes
    if n_labeled > ds.n:
        raise DataError(f"n_labeled {n_labeled} exceeds dataset size {ds.n}")
    if n_labeled % c != 0:
        raise DataError(f"n_labeled {n_labeled} is not divisible by {c} classes")
    per_class = n_labeled // c
    rng = substream(seed, "split")
    picked = []
    for cls in range(c):
        pool = np.flatnonzero(ds.y == cls)
        if pool.size < per_class:
            raise DataError(
                f"class {cls} has only {pool.size} samples, need {per_class}"
            )
        picked.append(rng.choice(pool, size=per_class, replace=False))
    idx = np.concatenate(picked)
    rng.shuffle(idx)
    return ds.subset(idx, name=f"{ds.name}-labeled{n_labeled}"), ds


def train_test_split(ds: Dataset, test_fraction, seed):
    """Stratified (when labeled) holdout split; used by the synthetic runs."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0,1), got {test_fraction}")
    rng = substream(seed, "holdout")
    if ds.labeled:
        test_idx = []
        for cls in range(ds.n_classes):
            pool = np.flatnonzero(ds.y == cls)
            k = int(round(pool.size * test_fraction))
            if pool.size and k == pool.size:
                k = pool.size - 1
            test_idx.append(rng.choice(pool, size=k, replace=False))
        test_idx = np.concatenate(test_idx)
    else:
        k = int(round(ds.n * test_fraction))
        test_idx = rng.choice(ds.n, size=k, replace=False)
    mask = np.ones(ds.n, dtype=bool)
    mask[test_idx] = False
    return ds.subset(np.flatnonzero(mask), name=f"{ds.name}-train"), ds.subset(
        np.sort(test_idx), name=f"{ds.name}-test"
    )


def onehot(y, n_classes) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def class_prior(y, n_classes) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


def to_csv(ds: Dataset, path):
    """Header row of feature columns then label; full-precision values."""
    with open(path, "w") as f:
        cols = [f"f{i}" for i in range(ds.dim)] + ["label"]
        f.write(",".join(cols) + "\n")
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.x[i]]
            row.append(str(int(ds.y[i])) if ds.labeled else "")
            f.write(",".join(row) + "\n")
