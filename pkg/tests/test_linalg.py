import numpy as np
import pytest

from kln.errors import (
    AsymmetricMatrixError,
    NonFiniteError,
    NotPositiveDefiniteError,
    ShapeError,
)
from kln.linalg import matmul, spd_solve, trace_of_product


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(matmul(np.eye(3), a), a)

    def test_hand_checked_2x2(self):
        out = matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]])
        assert np.array_equal(out, [[2.0], [4.0]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        assert np.allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_rejects_nan(self):
        a = np.zeros((2, 2))
        a[0, 0] = np.nan
        with pytest.raises(NonFiniteError):
            matmul(a, np.zeros((2, 2)))

    def test_associativity(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = rng.standard_normal((4, 6))
            b = rng.standard_normal((6, 5))
            c = rng.standard_normal((5, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.max(np.abs(left - right)) <= 1e-10 * np.max(np.abs(left))


def random_spd(rng, n, cond=100.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.geomspace(1.0, cond, n)
    return (q * eigs) @ q.T


class TestSpdSolve:
    def test_diagonal_case(self):
        assert np.allclose(spd_solve(2.0 * np.eye(4), np.eye(4)), 0.5 * np.eye(4))

    def test_2x2_closed_form(self):
        x = spd_solve([[2.0, 1.0], [1.0, 2.0]], [[1.0], [0.0]])
        assert np.allclose(x, [[2.0 / 3.0], [-1.0 / 3.0]], rtol=1e-14)

    def test_residual_on_random_spd(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            k = random_spd(rng, 30)
            k += 0.01 * np.eye(30)
            b = rng.standard_normal((30, 4))
            x = spd_solve(k, b)
            res = np.linalg.norm(k @ x - b) / np.linalg.norm(b)
            assert res <= 1e-8

    def test_recovers_solution(self):
        # conditioning up to 1e6 per the module contract
        rng = np.random.default_rng(3)
        for cond in (10.0, 1e3, 1e6):
            a = random_spd(rng, 20, cond)
            x_true = rng.standard_normal((20, 3))
            x = spd_solve(a, a @ x_true)
            rel = np.linalg.norm(x - x_true) / np.linalg.norm(x_true)
            assert rel <= 1e-7, f"cond={cond}: rel err {rel:.2e}"

    def test_not_positive_definite_carries_pivot(self):
        a = np.diag([1.0, -1.0, 1.0])
        with pytest.raises(NotPositiveDefiniteError) as exc:
            spd_solve(a, np.eye(3))
        assert exc.value.pivot == 1

    def test_rejects_asymmetric(self):
        a = np.eye(3)
        a[0, 1] = 1e-6
        with pytest.raises(AsymmetricMatrixError):
            spd_solve(a, np.eye(3))

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            spd_solve(np.zeros((2, 3)), np.zeros((2, 2)))
        with pytest.raises(ShapeError):
            spd_solve(np.eye(3), np.zeros((2, 2)))


class TestTraceOfProduct:
    def test_identity_gives_trace(self):
        a = np.arange(16.0).reshape(4, 4)
        assert trace_of_product(np.eye(4), a) == np.trace(a)

    def test_hand_expansion(self):
        assert trace_of_product([[1.0, 2.0], [3.0, 4.0]], [[0.0, 1.0], [1.0, 0.0]]) == 5.0

    def test_matches_full_product(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((6, 6))
        b = rng.standard_normal((6, 6))
        want = np.trace(a @ b)
        assert abs(trace_of_product(a, b) - want) <= 1e-12 * abs(want)

    def test_cyclic_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((4, 7))
        b = rng.standard_normal((7, 4))
        t1 = trace_of_product(a, b)
        t2 = trace_of_product(b, a)
        assert abs(t1 - t2) <= 1e-12 * max(1.0, abs(t1))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            trace_of_product(np.zeros((2, 3)), np.zeros((2, 3)))
