"""Gram-matrix construction for the data-side and label-side kernels.

The data-side kernel runs on raw inputs or latent codes; the label side
runs on one-hot vectors (true labels) or softmax probability vectors
(predicted labels).  Gaussian-mixture components are AVERAGED rather than
summed so that k(x, x) = 1 and all kernel values live in (0, 1]; averaging
is a positive rescaling of the sum and preserves every argmin/argmax.
Bandwidths are sigma^2 values, i.e. the denominator of the exponent.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .linalg import as_matrix

GAUSSIAN_MIXTURE = "gaussian_mixture"
LINEAR = "linear"

DEFAULT_BANDWIDTHS = (1.0, 3.0, 5.0, 7.0, 9.0)


@dataclass(frozen=True)
class KernelSpec:
    family: str
    bandwidths: tuple = ()

    def __post_init__(self):
        if self.family not in (GAUSSIAN_MIXTURE, LINEAR):
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "bandwidths", tuple(float(s) for s in self.bandwidths))
        if self.family == GAUSSIAN_MIXTURE:
            if not self.bandwidths:
                raise ValueError("gaussian mixture needs at least one bandwidth")
            if any(s <= 0 for s in self.bandwidths):
                raise ValueError(f"bandwidths must be positive, got {self.bandwidths}")
        elif self.bandwidths:
            raise ValueError("linear kernel takes no bandwidths")


def gaussian_mixture(bandwidths=DEFAULT_BANDWIDTHS) -> KernelSpec:
    return KernelSpec(GAUSSIAN_MIXTURE, tuple(bandwidths))


def linear() -> KernelSpec:
    return KernelSpec(LINEAR)


def _check_batches(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ShapeError(f"empty batch: shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature widths differ: {a.shape} vs {b.shape}")
    return a, b


def pairwise_sqdist(a, b) -> np.ndarray:
    """Row-pairwise squared distances, clamped at 0 to kill negative round-off.

    When ``a is b`` the diagonal is set exactly to zero so self-similarities
    come out exactly 1.0 under the Gaussian mixture.
    """
    same = a is b
    a, bm = _check_batches(a, b)
    sq_a = np.sum(a * a, axis=1)
    sq_b = sq_a if same else np.sum(bm * bm, axis=1)
    d = sq_a[:, None] + sq_b[None, :] - 2.0 * (a @ bm.T)
    np.maximum(d, 0.0, out=d)
    if same:
        np.fill_diagonal(d, 0.0)
    return d


def gram(spec: KernelSpec, a, b) -> np.ndarray:
    """Gram matrix G[i, j] = k(a_i, b_j), shape (n_a, n_b)."""
    same = a is b
    if spec.family == LINEAR:
        a, b = _check_batches(a, b)
        g = a @ b.T
    else:
        d = pairwise_sqdist(a, b)
        g = np.zeros_like(d)
        for s2 in spec.bandwidths:
            g += np.exp(-d / s2)
        g /= len(spec.bandwidths)
    if same:
        g = (g + g.T) / 2.0  # BLAS products are not exactly symmetric
    return g


def gram_backward(spec: KernelSpec, a, b, upstream):
    """Gradients of sum(upstream * gram(spec, a, b)) w.r.t. ``a`` and ``b``.

    ``upstream`` has the gram's shape.  For the mixture the per-pair weight is
    mean_q exp(-d_ij / s2_q) / s2_q and dG/da_i picks up -2 (a_i - b_j) per pair.
    """
    same = a is b
    am, bm = _check_batches(a, b)
    upstream = as_matrix(upstream, "upstream")
    if upstream.shape != (am.shape[0], bm.shape[0]):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match gram "
            f"({am.shape[0]}, {bm.shape[0]})"
        )
    if spec.family == LINEAR:
        return upstream @ bm, upstream.T @ am
    d = pairwise_sqdist(a, b)
    p = np.zeros_like(d)
    for s2 in spec.bandwidths:
        p += np.exp(-d / s2) / s2
    p /= len(spec.bandwidths)
    w = upstream * p
    d_a = -2.0 * (np.sum(w, axis=1)[:, None] * am - w @ bm)
    d_b = -2.0 * (np.sum(w, axis=0)[:, None] * bm - w.T @ am)
    return d_a, d_b


def kernel_rowwise(spec: KernelSpec, a, b) -> np.ndarray:
    """k(a_i, b_i) per row; used by the pair-sampling diagnostics."""
    a, b = _check_batches(a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row counts differ: {a.shape} vs {b.shape}")
    if spec.family == LINEAR:
        return np.sum(a * b, axis=1)
    d = np.maximum(np.sum((a - b) ** 2, axis=1), 0.0)
    vals = np.zeros_like(d)
    for s2 in spec.bandwidths:
        vals += np.exp(-d / s2)
    return vals / len(spec.bandwidths)


def compound_gram(spec: KernelSpec, encode, a, b) -> np.ndarray:
    """Gram of the compound kernel: base kernel applied to encoded rows."""
    za = encode(a)
    zb = za if b is a else encode(b)
    return gram(spec, za, zb)
