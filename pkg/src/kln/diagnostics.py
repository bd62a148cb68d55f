"""Kernel-degradation diagnostics: H-matrix heat maps, kernel-value
histograms for same- vs different-class pairs, and a scalar separation score.

The H matrix is the weight applied to the label Gram inside the discrepancy
traces; when it looks the same for a mixed-class batch and a single-class
batch, the kernel cannot tell within-class from between-class similarity.
Exports are plain CSV plus an 8-bit PGM of the min-max-normalized matrix;
the CSV keeps exact values so nothing is lost to the image normalization.
"""

from dataclasses import dataclass

import numpy as np

from .cmmd import h_matrix
from .data import Dataset
from .errors import DataError
from .kernels import KernelSpec, gram, kernel_rowwise
from .rng import substream


def _encoded(encode, x):
    return x if encode is None else encode(x)


def h_heatmap(ds: Dataset, spec: KernelSpec, encode, batch_size, lam, seed,
              single_class=None):
    """H matrix for a seeded batch; ``single_class`` draws from one class only.

    Returns (H, stats) where stats reports the off-diagonal mean and
    coefficient of variation (the paper-style uniformity check is reported,
    not asserted: near-identical off-diagonals mean a degraded kernel).
    """
    rng = substream(seed, "diagnostics")
    if single_class is None:
        if ds.n < batch_size:
            raise DataError(f"need {batch_size} samples, dataset has {ds.n}")
        idx = rng.choice(ds.n, size=batch_size, replace=False)
    else:
        if not ds.labeled:
            raise DataError("single-class heat map needs a labeled dataset")
        pool = np.flatnonzero(ds.y == single_class)
        if pool.size < batch_size:
            raise DataError(
                f"class {single_class} has {pool.size} samples, need {batch_size}"
            )
        idx = rng.choice(pool, size=batch_size, replace=False)
    features = _encoded(encode, ds.x[idx])
    k = gram(spec, features, features)
    h = h_matrix(k, lam)
    off = h[~np.eye(h.shape[0], dtype=bool)]
    mean = float(np.mean(off))
    stats = {
        "offdiag_mean": mean,
        "offdiag_cv": float(np.std(off) / abs(mean)) if mean != 0 else float("inf"),
    }
    return h, stats


@dataclass
class HistogramResult:
    bin_edges: np.ndarray    # (bins+1,) over [0, 1]
    count_same: np.ndarray   # (bins,)
    count_diff: np.ndarray
    same_values: np.ndarray
    diff_values: np.ndarray


def kernel_histogram(ds: Dataset, spec: KernelSpec, encode, pairs=10000,
                     bins=50, seed=0) -> HistogramResult:
    """Kernel values for ``pairs`` same-class and ``pairs`` different-class
    sample pairs, binned over [0, 1]."""
    if not ds.labeled:
        raise DataError("kernel histogram needs a labeled dataset")
    if pairs < 1 or bins < 1:
        raise DataError("pairs and bins must be positive")
    rng = substream(seed, "diagnostics")
    pools = [np.flatnonzero(ds.y == c) for c in range(ds.n_classes)]
    for c, pool in enumerate(pools):
        if pool.size < 2:
            raise DataError(f"class {c} has fewer than 2 samples")

    same_cls = rng.integers(0, ds.n_classes, size=pairs)
    left = np.empty(pairs, dtype=np.int64)
    right = np.empty(pairs, dtype=np.int64)
    for i, c in enumerate(same_cls):
        a, b = rng.choice(pools[c], size=2, replace=False)
        left[i], right[i] = a, b
    za = _encoded(encode, ds.x[left])
    zb = _encoded(encode, ds.x[right])
    same_values = kernel_rowwise(spec, za, zb)

    for i in range(pairs):
        ca, cb = rng.choice(ds.n_classes, size=2, replace=False)
        left[i] = rng.choice(pools[ca])
        right[i] = rng.choice(pools[cb])
    za = _encoded(encode, ds.x[left])
    zb = _encoded(encode, ds.x[right])
    diff_values = kernel_rowwise(spec, za, zb)

    edges = np.linspace(0.0, 1.0, bins + 1)
    count_same, _ = np.histogram(same_values, bins=edges)
    count_diff, _ = np.histogram(diff_values, bins=edges)
    return HistogramResult(edges, count_same, count_diff, same_values, diff_values)


def separation_score(same_values, diff_values) -> float:
    """mean(same-class kernel values) - mean(different-class kernel values)."""
    same_values = np.asarray(same_values, dtype=np.float64)
    diff_values = np.asarray(diff_values, dtype=np.float64)
    if same_values.size == 0 or diff_values.size == 0:
        raise DataError("separation score needs non-empty samples on both sides")
    return float(np.mean(same_values) - np.mean(diff_values))


def write_matrix_csv(path, m):
    m = np.asarray(m, dtype=np.float64)
    with open(path, "w") as f:
        for row in m:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def write_pgm(path, m):
    """Binary 8-bit PGM of the min-max-normalized matrix."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = float(np.min(m)), float(np.max(m))
    span = hi - lo if hi > lo else 1.0
    img = np.round((m - lo) / span * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_histogram_csv(path, hist: HistogramResult):
    with open(path, "w") as f:
        f.write("bin_left,bin_right,count_same,count_diff\n")
        for i in range(hist.count_same.size):
            f.write(
                f"{float(hist.bin_edges[i])!r},{float(hist.bin_edges[i + 1])!r},"
                f"{int(hist.count_same[i])},{int(hist.count_diff[i])}\n"
            )
