"""
Linear time-invariant systems x' = A x + B u + c.
"""

import numpy as np

from src.dynamics.base import SystemModel
from src.utils.errors import ContractError


class LinearSystem(SystemModel):
    """
    Affine system with constant matrices; linearization is exact everywhere.

    Args:
        A: n x n drift matrix
        B: n x m input matrix
        c: Constant drift (zero when omitted)
        state_bounds: Optional (n, 2) array of per-coordinate limits
    """
    name = "linear"

    def __init__(self, A, B, c=None, state_bounds=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ContractError(f"inconsistent shapes A{A.shape} B{B.shape}")
        self.n, self.m = B.shape
        c = np.zeros(self.n) if c is None else np.asarray(c, dtype=float)
        if c.shape != (self.n,):
            raise ContractError(f"c must have shape ({self.n},), got {c.shape}")
        self.A = A
        self.B = B
        self.c = c
        self.state_labels = tuple(f"x{i + 1}" for i in range(self.n))
        self.control_labels = tuple(f"u{j + 1}" for j in range(self.m))
        super().__init__(state_bounds)

    def drift(self, x):
        return self.A @ x + self.c

    def input_matrix(self, x):
        return self.B

    def drift_jacobian(self, x):
        return self.A

    def input_matrix_jacobian(self, x):
        return np.zeros((self.n, self.m, self.n))

    @classmethod
    def random(cls, rng, n, m, scale=1.0):
        """Random instance for solver checks, drawn from a numpy Generator."""
        A = scale * rng.standard_normal((n, n)) / np.sqrt(n)
        B = rng.standard_normal((n, m))
        c = 0.1 * scale * rng.standard_normal(n)
        return cls(A, B, c)


class DoubleIntegrator(LinearSystem):
    """x1' = x2, x2' = u."""
    name = "double_integrator"

    def __init__(self, state_bounds=None):
        super().__init__([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], state_bounds=state_bounds)
        self.state_labels = ("position", "velocity")
        self.control_labels = ("force",)
