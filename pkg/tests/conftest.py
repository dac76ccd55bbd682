"""
Shared fixtures: small systems, coarse integrator settings and seeded generators.
"""

import numpy as np
import pytest

from src.dynamics import CostWeights, DiffDrive, DoubleIntegrator, LinearSystem, Pendulum, Scara
from src.numeric import IntegratorConfig
from src.tpbvp import SolverConfig


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture
def coarse():
    return IntegratorConfig(dt=0.01)


@pytest.fixture
def fine():
    return IntegratorConfig(dt=1e-3)


@pytest.fixture
def unit_weights():
    return CostWeights(1.0)


@pytest.fixture
def double_integrator():
    return DoubleIntegrator()


@pytest.fixture
def scalar_integrator():
    """x' = u: A = 0, B = 1, c = 0."""
    return LinearSystem([[0.0]], [[1.0]])


@pytest.fixture
def pendulum():
    return Pendulum()


@pytest.fixture
def diff_drive():
    return DiffDrive()


@pytest.fixture
def scara():
    return Scara()


@pytest.fixture
def solver_cfg(coarse):
    return SolverConfig(integrator=coarse)

