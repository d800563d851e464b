"""Dense linear algebra services: GMRES, direct solves, condition numbers.

Everything here works on plain dense ndarrays; the systems in this project
top out at a few dozen unknowns, so sparse machinery would be overhead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    """Matrix is singular to working precision."""


@dataclass(frozen=True)
class GmresPolicy:
    """Inner linear solve policy: relative tolerance and iteration cap.

    ``max_iter`` of None means one full-memory sweep of up to n Arnoldi
    vectors (no restarts).
    """

    tol: float = 1e-5
    max_iter: int | None = None

    def __post_init__(self):
        if not (0.0 < self.tol < 1.0):
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def gmres_solve(
    A: np.ndarray, b: np.ndarray, policy: GmresPolicy = GmresPolicy()
) -> tuple[np.ndarray, float]:
    """Full-memory GMRES with Givens-rotation least squares.

    Returns the iterate and the achieved relative residual ``|Ax-b|/|b|``.
    Convergence means the returned value is at or below ``policy.tol``;
    otherwise the best iterate found is returned and the caller decides.
    An exact Arnoldi breakdown yields the exact solution in the Krylov space
    built so far.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"A must be {n}x{n}, got {A.shape}")

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), 0.0

    max_iter = min(policy.max_iter or n, n)
    Q = np.zeros((n, max_iter + 1))
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)

    Q[:, 0] = b / b_norm
    g[0] = b_norm

    k_used = 0
    for k in range(max_iter):
        # Arnoldi step with modified Gram-Schmidt.
        w = A @ Q[:, k]
        for j in range(k + 1):
            H[j, k] = Q[:, j] @ w
            w -= H[j, k] * Q[:, j]
        H[k + 1, k] = np.linalg.norm(w)
        breakdown = H[k + 1, k] <= 1e-14 * b_norm
        if not breakdown:
            Q[:, k + 1] = w / H[k + 1, k]

        # Apply the accumulated rotations, then a new one to annihilate the
        # subdiagonal entry.
        for j in range(k):
            t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
            H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
            H[j, k] = t
        denom = np.hypot(H[k, k], H[k + 1, k])
        if denom == 0.0:
            cs[k], sn[k] = 1.0, 0.0
        else:
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
        H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]

        k_used = k + 1
        rel = abs(g[k + 1]) / b_norm
        if rel <= policy.tol or breakdown:
            break

    y = np.linalg.lstsq(H[:k_used, :k_used], g[:k_used], rcond=None)[0]
    x = Q[:, :k_used] @ y
    achieved = float(np.linalg.norm(A @ x - b) / b_norm)
    return x, achieved


def lu_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct dense solve (LAPACK LU with partial pivoting).

    Raises SingularMatrixError when the factorization fails or produces
    non-finite values, which solvers map to a numerical-failure status.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("solution contains non-finite entries")
    return x


def condition_number(A: np.ndarray) -> float:
    """Spectral condition number from a full SVD; inf for numerically
    singular input."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    if A.shape[0] > 256:
        raise ValueError("dense SVD condition numbers are limited to n <= 256")
    if not np.all(np.isfinite(A)):
        return float("inf")
    sigma = np.linalg.svd(A, compute_uv=False)
    if sigma[-1] < 1e-300:
        return float("inf")
    return float(sigma[0] / sigma[-1])
