"""
Control-affine system interface and the operations built on it.

A model supplies the drift a(x), the input matrix Bc(x) and their Jacobians;
f(x, u) = a(x) + Bc(x) u. The minimum-principle control, Hamiltonian and its
derivatives follow in closed form from that structure.
"""

from abc import ABC, abstractmethod
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from src.affine_ocp import AffineModel
from src.utils.errors import ContractError

# Relative step for central differences of analytic first derivatives.
FD_STEP = 1e-5

# A rigid piece of the robot in the workspace: a planar segment (start == end for
# a point) occupying heights [z_low, z_high].
WorkspaceBody = namedtuple("WorkspaceBody", ["start", "end", "z_low", "z_high"])


@dataclass(frozen=True)
class CostWeights:
    """
    Control weight R of the running cost 1 + 1/2 u^T R u.

    Args:
        R: Symmetric positive definite m x m matrix (a scalar or 1-D diagonal is accepted)
    """
    R: np.ndarray
    R_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if R.ndim == 0:
            R = R.reshape(1, 1)
        elif R.ndim == 1:
            R = np.diag(R)
        if R.shape[0] != R.shape[1]:
            raise ContractError(f"R must be square, got shape {R.shape}")
        if not np.allclose(R, R.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(R).max())):
            raise ContractError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise ContractError("R must be positive definite")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "R_inv", np.linalg.inv(R))

    @property
    def m(self):
        return self.R.shape[0]

    def running_cost(self, controls):
        """1 + 1/2 u^T R u for each row of `controls`."""
        U = np.atleast_2d(controls)
        return 1.0 + 0.5 * np.einsum("ti,ij,tj->t", U, self.R, U)


class SystemModel(ABC):
    """
    Control-affine dynamics x' = a(x) + Bc(x) u.

    Subclasses set `name`, `n`, `m`, `angle_coordinates` and implement the four
    structural maps. Instances are immutable after construction.
    """
    name = "system"
    n = 0
    m = 0
    angle_coordinates = ()
    state_labels = ()
    control_labels = ()

    def __init__(self, state_bounds=None):
        if state_bounds is None:
            state_bounds = np.column_stack([np.full(self.n, -np.inf), np.full(self.n, np.inf)])
        state_bounds = np.asarray(state_bounds, dtype=float)
        if state_bounds.shape != (self.n, 2):
            raise ContractError(f"{self.name}: state bounds must have shape ({self.n}, 2)")
        self.state_bounds = state_bounds

    @abstractmethod
    def drift(self, x):
        """a(x), shape (n,)."""

    @abstractmethod
    def input_matrix(self, x):
        """Bc(x), shape (n, m)."""

    @abstractmethod
    def drift_jacobian(self, x):
        """da/dx, shape (n, n)."""

    @abstractmethod
    def input_matrix_jacobian(self, x):
        """dBc/dx as an (n, m, n) array: [i, j, k] = d Bc[i, j] / d x[k]."""

    def f(self, x, u):
        return self.drift(x) + self.input_matrix(x) @ u

    def workspace_bodies(self, x):
        """Bodies checked against obstacles; empty when the system has no workspace."""
        return []

    def parameters(self):
        """Physical parameters recorded in artifact headers."""
        return {}

    def __repr__(self):
        params = ", ".join(f"{k}={v:g}" for k, v in self.parameters().items())
        return f"{type(self).__name__}({params})"


def _vector(x, size, what):
    x = np.asarray(x, dtype=float)
    if x.shape != (size,):
        raise ContractError(f"{what} must have shape ({size},), got {x.shape}")
    return x


def eval_f(model, x, u):
    """
    Evaluate x' = a(x) + Bc(x) u.

    Raises:
        ContractError: on dimension mismatch
    """
    x = _vector(x, model.n, "state")
    u = _vector(u, model.m, "control")
    return model.f(x, u)


def state_jacobian(model, x, u):
    """df/dx = da/dx + sum_j dBc[:, j]/dx u_j."""
    return model.drift_jacobian(x) + np.einsum("ijk,j->ik", model.input_matrix_jacobian(x), u)


def linearize(model, x_hat, u_hat=None, weights=None):
    """
    First-order model x' = A x + B u + c around (x_hat, u_hat).

    Args:
        model: SystemModel
        x_hat: Linearization state
        u_hat: Linearization control (zero when omitted, as in every planner use)
        weights: Optional CostWeights attached to the returned model

    Returns:
        AffineModel with c = f(x_hat, u_hat) - A x_hat - B u_hat
    """
    x_hat = _vector(x_hat, model.n, "linearization state")
    u_hat = np.zeros(model.m) if u_hat is None else _vector(u_hat, model.m, "linearization control")
    A = state_jacobian(model, x_hat, u_hat)
    B = model.input_matrix(x_hat)
    c = model.f(x_hat, u_hat) - A @ x_hat - B @ u_hat
    return AffineModel(A=A, B=B, c=c, weights=weights)


def residual_g(model, x, u, affine):
    """g(x, u) = f(x, u) - A x - B u, so that f = A x + B u + g exactly (g carries c)."""
    return model.f(x, u) - affine.A @ x - affine.B @ u


def g_x(model, x, u, affine):
    return state_jacobian(model, x, u) - affine.A


def g_u(model, x, u, affine):
    return model.input_matrix(x) - affine.B


def optimal_control(model, x, lam, weights):
    """u = -R^{-1} Bc(x)^T lambda, the stationary point of the Hamiltonian."""
    return -weights.R_inv @ (model.input_matrix(x).T @ lam)


def hamiltonian(model, x, lam, weights):
    """H = 1 + 1/2 u^T R u + lambda^T f(x, u) at the minimizing u."""
    u = optimal_control(model, x, lam, weights)
    return 1.0 + 0.5 * u @ weights.R @ u + lam @ model.f(x, u)


def hamiltonian_gradients(model, x, lam, weights):
    """
    First derivatives of the minimized Hamiltonian.

    Returns:
        (H_x, H_lambda) with H_lambda = f(x, u*) and H_x = (df/dx)^T lambda
    """
    u = optimal_control(model, x, lam, weights)
    H_lam = model.f(x, u)
    H_x = state_jacobian(model, x, u).T @ lam
    return H_x, H_lam


def hamiltonian_hessians(model, x, lam, weights):
    """
    Second derivatives of the minimized Hamiltonian for the influence-matrix ODE.

    dH_lambda/dlambda is analytic; derivatives with respect to x come from central
    differences of the analytic gradients, and dH_x/dlambda is the transpose of
    dH_lambda/dx.

    Returns:
        (dHlam_dx, dHlam_dlam, dHx_dx, dHx_dlam), each (n, n)
    """
    n = model.n
    Bc = model.input_matrix(x)
    dHlam_dlam = -Bc @ weights.R_inv @ Bc.T
    dHlam_dx = np.empty((n, n))
    dHx_dx = np.empty((n, n))
    for k in range(n):
        h = FD_STEP * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        Hx_p, Hl_p = hamiltonian_gradients(model, xp, lam, weights)
        Hx_m, Hl_m = hamiltonian_gradients(model, xm, lam, weights)
        dHlam_dx[:, k] = (Hl_p - Hl_m) / (2.0 * h)
        dHx_dx[:, k] = (Hx_p - Hx_m) / (2.0 * h)
    dHx_dx = 0.5 * (dHx_dx + dHx_dx.T)
    return dHlam_dx, dHlam_dlam, dHx_dx, dHlam_dx.T


def wrap_angles(x, angle_coordinates):
    """Copy of x with the listed coordinates mapped into (-pi, pi]."""
    x = np.array(x, dtype=float)
    for k in angle_coordinates:
        x[..., k] = np.pi - np.mod(np.pi - x[..., k], 2.0 * np.pi)
    return x
