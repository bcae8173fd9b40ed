"""Dense linear algebra primitives used by the estimators and oracles.

Everything operates on float64 numpy arrays in row-major (C) order.  The
vectorization convention throughout the package is row-major: ``vec(G)`` is
``G.reshape(-1)``, under which ``(C kron D) @ vec(G) == vec(C @ G @ D.T)``.
"""

from __future__ import annotations

import numpy as np

DEFAULT_SVD_TOL = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    return a


def kron_apply(C, D, G) -> np.ndarray:
    """Apply the Kronecker product ``C kron D`` to ``vec(G)`` without materializing it.

    Returns the matrix ``C @ G @ D.T`` whose row-major vectorization equals
    ``(C kron D) @ vec(G)``.

    Parameters
    ----------
    C : (m, p) array
    D : (r, q) array
    G : (p, q) array

    Returns
    -------
    (m, r) array
    """
    C = _as_matrix(C, "C")
    D = _as_matrix(D, "D")
    G = _as_matrix(G, "G")
    if C.shape[1] != G.shape[0]:
        raise ValueError(
            f"dimension mismatch between C (cols={C.shape[1]}) and G (rows={G.shape[0]})"
        )
    if D.shape[1] != G.shape[1]:
        raise ValueError(
            f"dimension mismatch between D (cols={D.shape[1]}) and G (cols={G.shape[1]})"
        )
    return C @ G @ D.T


def pseudo_inverse(M, tol: float = DEFAULT_SVD_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD with relative singular-value cutoff.

    Singular values below ``tol * sigma_max`` are treated as zero.

    Parameters
    ----------
    M : (m, n) array
    tol : float
        Relative cutoff, must be positive.
    """
    M = _as_matrix(M, "M")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not np.all(np.isfinite(M)):
        raise ValueError("M contains non-finite entries")
    if M.size == 0:
        return M.T.copy()
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    cutoff = tol * (s[0] if s.size else 0.0)
    inv_s = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vt.T * inv_s) @ u.T


def ridge_regression(A, b, lam: float) -> np.ndarray:
    """Solve ``min_x ||A x - b||^2 + lam ||x||^2`` via the normal equations.

    Parameters
    ----------
    A : (n, p) array
    b : (n,) array
    lam : float
        Ridge weight, nonnegative.  With ``lam == 0`` the Gram matrix must be
        nonsingular; otherwise an error advises a positive ``lam``.

    Returns
    -------
    (p,) array satisfying ``(A^T A + lam I) x = A^T b``.
    """
    A = _as_matrix(A, "A")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if A.shape[0] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch between A (rows={A.shape[0]}) and b (dim={b.shape[0]})"
        )
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    gram = A.T @ A
    rhs = A.T @ b
    sys = gram + lam * np.eye(gram.shape[0])
    try:
        x = np.linalg.solve(sys, rhs)
    except np.linalg.LinAlgError:
        if lam == 0.0:
            raise np.linalg.LinAlgError(
                "A^T A is singular; pass a positive lam to regularize"
            ) from None
        raise
    residual = np.linalg.norm(sys @ x - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if residual > 1e-8 * scale:
        if lam == 0.0:
            raise np.linalg.LinAlgError(
                "A^T A is numerically singular (normal-equation residual "
                f"{residual / scale:.2e} relative); pass a positive lam"
            )
        # One step of iterative refinement for ill-conditioned ridge systems.
        x = x + np.linalg.solve(sys, rhs - sys @ x)
    return x


def solve_psd(M, rhs, jitter: float = 0.0) -> np.ndarray:
    """Solve ``M x = rhs`` for symmetric positive semidefinite ``M``.

    ``jitter * trace(M)/dim`` is added to the diagonal before factorizing.
    With ``jitter == 0`` a singular ``M`` raises.
    """
    M = _as_matrix(M, "M")
    rhs = np.asarray(rhs, dtype=np.float64)
    d = M.shape[0]
    if M.shape[1] != d:
        raise ValueError(f"M must be square, got {M.shape}")
    if jitter > 0:
        M = M + (jitter * np.trace(M) / d) * np.eye(d)
    try:
        c, low = _cho_factor(M)
        return _cho_solve(c, low, rhs)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "matrix is singular and no jitter was requested"
        ) from None


def _cho_factor(M):
    return np.linalg.cholesky(M), True


def _cho_solve(c, low, rhs):
    y = np.linalg.solve(c, rhs)
    return np.linalg.solve(c.T, y)
