"""
Deterministic fixed-step integration and small dense linear algebra.
"""

from .integrator import (
    CubicInterpolant,
    IntegratorConfig,
    IntegrationStats,
    LinearInterpolant,
    OdeSolution,
    integrate,
    iterate,
    rk4_step,
    time_grid,
)
from .linalg import GramianFactor, solve_linear, symmetrize
