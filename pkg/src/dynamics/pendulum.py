"""
Torque-driven pendulum: I theta'' + b theta' + m g l_c sin(theta) = u.

theta = 0 hangs down; the swing-up target is theta = pi.
"""

from dataclasses import dataclass, asdict

import numpy as np

from src.dynamics.base import SystemModel
from src.utils.errors import ContractError


@dataclass(frozen=True)
class PendulumParams:
    m: float = 1.0
    l_c: float = 0.5
    I: float = 0.25
    b: float = 0.1
    g: float = 9.8

    def __post_init__(self):
        if self.I <= 0 or self.m <= 0 or self.l_c <= 0:
            raise ContractError("pendulum requires I > 0, m > 0 and l_c > 0")
        if self.b < 0:
            raise ContractError("pendulum damping b must be non-negative")


class Pendulum(SystemModel):
    name = "pendulum"
    n = 2
    m = 1
    angle_coordinates = (0,)
    state_labels = ("theta", "theta_dot")
    control_labels = ("torque",)

    def __init__(self, params=None, state_bounds=None):
        self.params = params or PendulumParams()
        super().__init__(state_bounds)

    @property
    def _k(self):
        p = self.params
        return p.m * p.g * p.l_c / p.I

    def drift(self, x):
        return np.array([x[1], -self._k * np.sin(x[0]) - self.params.b / self.params.I * x[1]])

    def input_matrix(self, x):
        return np.array([[0.0], [1.0 / self.params.I]])

    def drift_jacobian(self, x):
        return np.array([[0.0, 1.0], [-self._k * np.cos(x[0]), -self.params.b / self.params.I]])

    def input_matrix_jacobian(self, x):
        return np.zeros((2, 1, 2))

    def parameters(self):
        return asdict(self.params)
