"""
Three-degree-of-freedom SCARA arm: two revolute joints and a vertical prismatic joint.

M(theta) theta'' + C(theta, theta') theta' + N = u with state
(theta1, theta2, theta3, theta1', theta2', theta3') and inputs (tau1, tau2, f3).
Only theta2 enters the inertia matrix, which keeps the Jacobians short.
"""

from dataclasses import dataclass, asdict

import numpy as np

from src.dynamics.base import SystemModel, WorkspaceBody
from src.utils.errors import ContractError


@dataclass(frozen=True)
class ScaraParams:
    m1: float = 1.0
    m2: float = 1.0
    m3: float = 0.5
    l1: float = 1.0
    l2: float = 1.0
    r1: float = 0.5
    r2: float = 0.5
    I_z1: float = 0.1
    I_z2: float = 0.1
    I_z3: float = 0.05
    g: float = 9.8
    link_height: float = 5.0

    def __post_init__(self):
        if min(self.m1, self.m2, self.m3, self.l1, self.l2) <= 0:
            raise ContractError("SCARA masses and link lengths must be positive")

    @property
    def alpha(self):
        return self.I_z1 + self.r1 ** 2 * self.m1 + self.l1 ** 2 * self.m2 + self.l1 ** 2 * self.m3

    @property
    def beta(self):
        return self.I_z2 + self.I_z3 + self.l2 ** 2 * self.m3 + self.m2 * self.r2 ** 2

    @property
    def gamma_scara(self):
        return self.l1 * self.l2 * self.m3 + self.l1 * self.m2 * self.r2


class Scara(SystemModel):
    name = "scara"
    n = 6
    m = 3
    angle_coordinates = (0, 1)
    state_labels = ("theta1", "theta2", "theta3", "theta1_dot", "theta2_dot", "theta3_dot")
    control_labels = ("tau1", "tau2", "f3")

    def __init__(self, params=None, state_bounds=None):
        self.params = params or ScaraParams()
        super().__init__(state_bounds)

    # Manipulator terms

    def mass_matrix(self, theta2):
        p = self.params
        c2 = np.cos(theta2)
        return np.array([
            [p.alpha + p.beta + 2.0 * p.gamma_scara * c2, p.beta + p.gamma_scara * c2, 0.0],
            [p.beta + p.gamma_scara * c2, p.beta, 0.0],
            [0.0, 0.0, p.m3],
        ])

    def mass_matrix_derivative(self, theta2):
        """dM/dtheta2."""
        gs = self.params.gamma_scara * np.sin(theta2)
        return np.array([
            [-2.0 * gs, -gs, 0.0],
            [-gs, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ])

    def coriolis_matrix(self, x):
        gs = self.params.gamma_scara * np.sin(x[1])
        q1d, q2d = x[3], x[4]
        return np.array([
            [-gs * q2d, -gs * (q1d + q2d), 0.0],
            [gs * q1d, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ])

    def _bias(self, x):
        """h = C theta' + N."""
        gs = self.params.gamma_scara * np.sin(x[1])
        q1d, q2d = x[3], x[4]
        return np.array([
            -gs * (2.0 * q1d * q2d + q2d ** 2),
            gs * q1d ** 2,
            self.params.m3 * self.params.g,
        ])

    # SystemModel

    def drift(self, x):
        M_inv = np.linalg.inv(self.mass_matrix(x[1]))
        return np.concatenate([x[3:], -M_inv @ self._bias(x)])

    def input_matrix(self, x):
        Bc = np.zeros((6, 3))
        Bc[3:, :] = np.linalg.inv(self.mass_matrix(x[1]))
        return Bc

    def drift_jacobian(self, x):
        p = self.params
        M_inv = np.linalg.inv(self.mass_matrix(x[1]))
        dM = self.mass_matrix_derivative(x[1])
        h = self._bias(x)
        gc = p.gamma_scara * np.cos(x[1])
        gs = p.gamma_scara * np.sin(x[1])
        q1d, q2d = x[3], x[4]

        dh_dtheta2 = np.array([-gc * (2.0 * q1d * q2d + q2d ** 2), gc * q1d ** 2, 0.0])
        dh_dq1d = np.array([-2.0 * gs * q2d, 2.0 * gs * q1d, 0.0])
        dh_dq2d = np.array([-2.0 * gs * (q1d + q2d), 0.0, 0.0])

        J = np.zeros((6, 6))
        J[:3, 3:] = np.eye(3)
        J[3:, 1] = M_inv @ (dM @ (M_inv @ h) - dh_dtheta2)
        J[3:, 3] = -M_inv @ dh_dq1d
        J[3:, 4] = -M_inv @ dh_dq2d
        return J

    def input_matrix_jacobian(self, x):
        M_inv = np.linalg.inv(self.mass_matrix(x[1]))
        dM = self.mass_matrix_derivative(x[1])
        T = np.zeros((6, 3, 6))
        T[3:, :, 1] = -M_inv @ dM @ M_inv
        return T

    # Workspace

    def forward_kinematics(self, x):
        """Elbow and end-effector planar positions."""
        p = self.params
        t1, t12 = x[..., 0], x[..., 0] + x[..., 1]
        elbow = np.stack([p.l1 * np.cos(t1), p.l1 * np.sin(t1)], axis=-1)
        tool = elbow + np.stack([p.l2 * np.cos(t12), p.l2 * np.sin(t12)], axis=-1)
        return elbow, tool

    def workspace_bodies(self, x):
        h = self.params.link_height
        elbow, tool = self.forward_kinematics(np.asarray(x, dtype=float))
        base = (0.0, 0.0)
        elbow = tuple(float(v) for v in elbow)
        tool = tuple(float(v) for v in tool)
        return [
            WorkspaceBody(base, elbow, h, h),
            WorkspaceBody(elbow, tool, h, h),
            # The prismatic tool hangs from the link plane down to theta3.
            WorkspaceBody(tool, tool, float(x[2]), h),
        ]

    def parameters(self):
        return asdict(self.params)
