import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from czbench import fem
from czbench.linalg import (
    GmresPolicy,
    SingularMatrixError,
    condition_number,
    gmres_solve,
    lu_solve,
)


def random_spd(n, rng, spread=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = rng.uniform(1.0, spread, size=n)
    return Q @ np.diag(eigs) @ Q.T


class TestGmres:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        x, rel = gmres_solve(np.eye(3), b)
        assert np.allclose(x, b, atol=1e-14)
        assert rel <= 1e-14

    def test_small_system_exact(self):
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        b = np.array([1.0, 2.0])
        x, rel = gmres_solve(A, b, GmresPolicy(tol=1e-12))
        assert np.allclose(x, [1.0 / 11.0, 7.0 / 11.0], atol=1e-12)

    def test_zero_rhs(self):
        x, rel = gmres_solve(np.array([[2.0, 0.0], [0.0, 2.0]]), np.zeros(2))
        assert np.array_equal(x, np.zeros(2))
        assert rel == 0.0

    def test_against_lu_on_bar_jacobian(self, coarse_itc):
        J = fem.assemble_jacobian(np.zeros(2), coarse_itc)
        b = -fem.assemble_residual(np.zeros(2), coarse_itc)
        x, rel = gmres_solve(J, b, GmresPolicy(tol=1e-5))
        x_ref = lu_solve(J, b)
        assert np.linalg.norm(x - x_ref) <= 1e-5 * np.linalg.norm(x_ref)

    def test_spd_full_memory_reaches_tol(self):
        rng = np.random.default_rng(5)
        for n in (2, 5, 16, 33):
            A = random_spd(n, rng)
            b = rng.normal(size=n)
            x, rel = gmres_solve(A, b, GmresPolicy(tol=1e-10, max_iter=n))
            assert rel <= 1e-10

    def test_nonconvergent_flagged(self):
        # One iteration on a non-normal system cannot reach the tolerance;
        # the achieved residual reports that honestly.
        rng = np.random.default_rng(9)
        A = random_spd(8, rng, spread=1e4)
        b = rng.normal(size=8)
        x, rel = gmres_solve(A, b, GmresPolicy(tol=1e-12, max_iter=1))
        assert rel > 1e-12

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            gmres_solve(np.eye(3), np.zeros(2))

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            GmresPolicy(tol=2.0)
        with pytest.raises(ValueError):
            GmresPolicy(max_iter=0)


class TestConditionNumber:
    def test_identity(self):
        assert condition_number(np.eye(4)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert condition_number(np.diag([1e4, 1.0])) == pytest.approx(1e4)

    def test_fully_open_jacobian_spring_ratio(self, coarse_itc):
        law = coarse_itc.law
        u = np.array([0.0, 2 * law.delta_f])
        J = fem.assemble_jacobian(u, coarse_itc)
        ratio = max(J[0, 0], J[1, 1]) / min(J[0, 0], J[1, 1])
        assert condition_number(J) == pytest.approx(ratio)

    @given(c=st.floats(min_value=1e-6, max_value=1e6), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_scale_invariant(self, c, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
        assert condition_number(c * A) == pytest.approx(condition_number(A), rel=1e-9)

    def test_singular_is_inf(self):
        A = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert condition_number(A) == np.inf

    def test_near_singular_is_huge(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert condition_number(A) > 1e15

    def test_rejects_nonsquare_and_large(self):
        with pytest.raises(ValueError):
            condition_number(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            condition_number(np.eye(300))


class TestLuSolve:
    def test_identity(self):
        b = np.array([3.0, 4.0])
        assert np.array_equal(lu_solve(np.eye(2), b), b)

    def test_permutation(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.allclose(lu_solve(A, np.array([2.0, 3.0])), [3.0, 2.0])

    def test_random_round_trip(self):
        rng = np.random.default_rng(17)
        count = 0
        while count < 100:
            A = rng.uniform(-1.0, 1.0, size=(5, 5))
            b = rng.uniform(-1.0, 1.0, size=5)
            if np.linalg.cond(A) >= 1e3:
                continue
            count += 1
            x = lu_solve(A, b)
            assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)

    def test_singular_raises(self):
        A = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError):
            lu_solve(A, np.array([1.0, 1.0]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            lu_solve(np.zeros((2, 3)), np.zeros(2))
