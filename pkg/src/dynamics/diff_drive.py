"""
Two-wheeled mobile robot with force inputs.

State (p_x, p_y, theta, v, w); wheel forces enter as v' = u1 + u2 and
w' = u1 - u2.
"""

import numpy as np

from src.dynamics.base import SystemModel, WorkspaceBody


class DiffDrive(SystemModel):
    name = "diff_drive"
    n = 5
    m = 2
    angle_coordinates = (2,)
    state_labels = ("p_x", "p_y", "theta", "v", "w")
    control_labels = ("u1", "u2")

    _B = np.array([
        [0.0, 0.0],
        [0.0, 0.0],
        [0.0, 0.0],
        [1.0, 1.0],
        [1.0, -1.0],
    ])

    def drift(self, x):
        _, _, theta, v, w = x
        return np.array([v * np.cos(theta), v * np.sin(theta), w, 0.0, 0.0])

    def input_matrix(self, x):
        return self._B

    def drift_jacobian(self, x):
        _, _, theta, v, _ = x
        J = np.zeros((5, 5))
        J[0, 2] = -v * np.sin(theta)
        J[0, 3] = np.cos(theta)
        J[1, 2] = v * np.cos(theta)
        J[1, 3] = np.sin(theta)
        J[2, 4] = 1.0
        return J

    def input_matrix_jacobian(self, x):
        return np.zeros((5, 2, 5))

    def workspace_bodies(self, x):
        point = (float(x[0]), float(x[1]))
        return [WorkspaceBody(point, point, -np.inf, np.inf)]

    @staticmethod
    def lateral_velocity(x, x_dot):
        """Sideways speed -p_x' sin(theta) + p_y' cos(theta); zero for any feasible motion."""
        theta = x[..., 2]
        return -x_dot[..., 0] * np.sin(theta) + x_dot[..., 1] * np.cos(theta)
