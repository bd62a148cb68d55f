"""Shared test utilities: finite-difference harness and eigenvalue estimates."""

import numpy as np

FD_STEP = 1e-5
FD_RTOL = 1e-4


def central_difference(fn, arr, step=FD_STEP):
    """Gradient of scalar fn() w.r.t. every entry of arr, mutated in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + step
        f_plus = fn()
        arr[i] = orig - step
        f_minus = fn()
        arr[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def max_rel_err(numeric, analytic):
    numeric = np.asarray(numeric)
    analytic = np.asarray(analytic)
    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-6)
    return float(np.max(np.abs(numeric - analytic) / denom))


def assert_grad_close(numeric, analytic, label="", rtol=FD_RTOL):
    err = max_rel_err(numeric, analytic)
    assert err <= rtol, f"{label}: finite differences disagree, max rel err {err:.3e}"


def min_eig_power(a, iters=300, seed=0):
    """Smallest eigenvalue of symmetric ``a`` via two power iterations:
    lambda_max of a, then lambda_max of (lambda_max*I - a)."""
    a = np.asarray(a, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def top_eig(m):
        v = rng.standard_normal(m.shape[0])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            w = m @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return 0.0
            v = w / norm
            lam = float(v @ (m @ v))
        return lam

    hi = top_eig(a)
    shift = abs(hi) + 1.0
    return shift - top_eig(shift * np.eye(a.shape[0]) - a)
