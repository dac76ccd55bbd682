"""
Small dense linear algebra: pivoted solves and symmetric Gramian factorizations.
"""

import numpy as np
import scipy.linalg

from src.utils.errors import ContractError, SingularMatrixError

# Relative pivot size under which a matrix is treated as singular.
PIVOT_TOLERANCE = 1e3 * np.finfo(float).eps
# Regularization added to near-singular Gramians, relative to trace(G)/n.
GRAMIAN_REGULARIZATION = 1e-10
# Eigenvalues below this fraction of the largest one span the numerical null space.
NULL_SPACE_TOLERANCE = 1e-12


def solve_linear(M, b):
    """
    Solve M x = b with an LU factorization with partial pivoting.

    Args:
        M: Square matrix
        b: Right-hand side vector (or matrix of columns)

    Returns:
        Solution with the shape of b

    Raises:
        ContractError: when shapes disagree
        SingularMatrixError: when a pivot is negligible relative to the largest
    """
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {M.shape}")
    if b.shape[0] != M.shape[0]:
        raise ContractError(f"right-hand side has {b.shape[0]} rows, matrix has {M.shape[0]}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
        raise ContractError("non-finite entries in linear system")

    scale = np.max(np.abs(M)) if M.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero")
    lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if np.min(pivots) <= PIVOT_TOLERANCE * M.shape[0] * np.max(pivots):
        raise SingularMatrixError(f"pivot ratio {np.min(pivots) / np.max(pivots):.3e} below tolerance")
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def symmetrize(G):
    return 0.5 * (G + G.T)


class GramianFactor:
    """
    Inverse of a symmetric positive semidefinite Gramian for repeated quadratic forms.

    A Cholesky factorization is tried first. When it fails the matrix is
    eigendecomposed: residual components along the numerical null space make a
    target unreachable (infinite cost); the rest is inverted with the
    eigenvalues shifted by eps = 1e-10 * trace(G) / n.
    """
    def __init__(self, G):
        G = symmetrize(np.asarray(G, dtype=float))
        n = G.shape[0]
        self.n = n
        self.regularized = False
        self.null_basis = np.zeros((n, 0))
        trace = float(np.trace(G))
        if trace <= 0.0:
            # G(0) = 0: only the zero residual is reachable.
            self.inverse = np.zeros((n, n))
            self.null_basis = np.eye(n)
            self.regularized = True
            return
        try:
            chol = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
            diag = np.abs(np.diag(chol[0]))
            if np.min(diag) ** 2 <= NULL_SPACE_TOLERANCE * np.max(diag) ** 2:
                raise np.linalg.LinAlgError("ill-conditioned")
            self.inverse = symmetrize(scipy.linalg.cho_solve(chol, np.eye(n), check_finite=False))
        except np.linalg.LinAlgError:
            self.regularized = True
            eps = GRAMIAN_REGULARIZATION * trace / n
            w, V = np.linalg.eigh(G)
            null = w <= NULL_SPACE_TOLERANCE * max(w[-1], 0.0)
            self.null_basis = V[:, null]
            keep = V[:, ~null]
            self.inverse = (keep / (w[~null] + eps)) @ keep.T

    def quadratic_forms(self, residuals):
        """
        d_i^T G^{-1} d_i for each row d_i of `residuals`.

        The per-row arithmetic does not depend on how many rows are passed, so a
        single residual scores identically to the same residual inside a batch.

        Args:
            residuals: Array (k, n) or (n,)

        Returns:
            Array (k,) of non-negative values; +inf where the residual leaves the column space
        """
        D = np.atleast_2d(np.asarray(residuals, dtype=float))
        Y = (D[:, :, None] * self.inverse[None, :, :]).sum(axis=1)
        q = (D * Y).sum(axis=1)
        q = np.maximum(q, 0.0)
        if self.null_basis.shape[1]:
            leak = np.abs(D @ self.null_basis).max(axis=1)
            scale = 1.0 + np.abs(D).max(axis=1)
            q = np.where(leak > 1e-9 * scale, np.inf, q)
        return q

    def solve(self, residual):
        """
        G^{-1} d for one residual.

        Raises:
            SingularMatrixError: when the residual leaves the column space of G
        """
        d = np.asarray(residual, dtype=float)
        if self.null_basis.shape[1]:
            leak = np.abs(d @ self.null_basis).max()
            if leak > 1e-9 * (1.0 + np.abs(d).max()):
                raise SingularMatrixError("residual outside the Gramian's column space")
        return (d[:, None] * self.inverse).sum(axis=0)
