"""Linear-algebra primitives against brute-force oracles."""

import numpy as np
import pytest

from spectral_causal.linalg import kron_apply, pseudo_inverse, ridge_regression


class TestKronApply:
    def test_identity_case(self):
        G = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(kron_apply(np.eye(2), np.eye(2), G), G)

    def test_scalar_case(self):
        out = kron_apply([[2.0]], [[3.0]], [[1.0]])
        np.testing.assert_allclose(out, [[6.0]])

    def test_matches_materialized_kronecker(self):
        rng = np.random.default_rng(7)
        C = rng.standard_normal((3, 2))
        D = rng.standard_normal((4, 3))
        G = rng.standard_normal((2, 3))
        out = kron_apply(C, D, G)
        assert out.shape == (3, 4)
        expected = np.kron(C, D) @ G.reshape(-1)
        np.testing.assert_allclose(out.reshape(-1), expected, atol=1e-12)

    def test_randomized_property_small_dims(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            m, p, r, q = rng.integers(1, 6, size=4)
            C = rng.standard_normal((m, p))
            D = rng.standard_normal((r, q))
            G = rng.standard_normal((p, q))
            lhs = kron_apply(C, D, G).reshape(-1)
            rhs = np.kron(C, D) @ G.reshape(-1)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_dimension_mismatch_names_pair(self):
        with pytest.raises(ValueError, match="C .*G"):
            kron_apply(np.eye(2), np.eye(2), np.zeros((3, 2)))
        with pytest.raises(ValueError, match="D .*G"):
            kron_apply(np.eye(2), np.eye(2), np.zeros((2, 3)))


def _penrose_dev(M, P):
    return max(
        np.abs(M @ P @ M - M).max(),
        np.abs(P @ M @ P - P).max(),
        np.abs(M @ P - (M @ P).T).max(),
        np.abs(P @ M - (P @ M).T).max(),
    )


class TestPseudoInverse:
    def test_identity(self):
        np.testing.assert_allclose(pseudo_inverse(np.eye(3)), np.eye(3), atol=1e-12)

    def test_singular_diagonal(self):
        out = pseudo_inverse(np.diag([2.0, 0.0]))
        np.testing.assert_allclose(out, np.diag([0.5, 0.0]), atol=1e-12)

    def test_penrose_identities_random(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((4, 3))
        assert _penrose_dev(M, pseudo_inverse(M)) < 1e-8

    def test_penrose_identities_rank_deficient(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            m, n, r = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 3)
            M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
            assert _penrose_dev(M, pseudo_inverse(M)) < 1e-8

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            pseudo_inverse(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_bad_tol_rejected(self):
        with pytest.raises(ValueError, match="tol"):
            pseudo_inverse(np.eye(2), tol=0.0)


class TestRidgeRegression:
    def test_identity_design_shrinks(self):
        x = ridge_regression(np.eye(2), np.array([2.0, 4.0]), 1.0)
        np.testing.assert_allclose(x, [1.0, 2.0], atol=1e-12)

    def test_identity_design_exact(self):
        x = ridge_regression(np.eye(2), np.array([2.0, 4.0]), 0.0)
        np.testing.assert_allclose(x, [2.0, 4.0], atol=1e-12)

    def test_matches_direct_normal_equation_solve(self):
        rng = np.random.default_rng(11)
        A = rng.standard_normal((20, 3))
        b = rng.standard_normal(20)
        lam = 0.1
        x = ridge_regression(A, b, lam)
        expected = np.linalg.inv(A.T @ A + lam * np.eye(3)) @ A.T @ b
        np.testing.assert_allclose(x, expected, atol=1e-8)

    def test_normal_equation_residual_tiny(self):
        rng = np.random.default_rng(12)
        for lam in (0.0, 1e-3, 1.0):
            A = rng.standard_normal((30, 4))
            b = rng.standard_normal(30)
            x = ridge_regression(A, b, lam)
            sys = A.T @ A + lam * np.eye(4)
            rhs = A.T @ b
            assert np.linalg.norm(sys @ x - rhs) < 1e-10 * np.linalg.norm(rhs)

    def test_singular_without_ridge_errors(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(np.linalg.LinAlgError, match="positive lam"):
            ridge_regression(A, np.ones(3), 0.0)
        # the same system succeeds with regularization
        x = ridge_regression(A, np.ones(3), 1e-3)
        assert np.all(np.isfinite(x))
