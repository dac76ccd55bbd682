"""
Nonlinear two-point boundary value solvers for free-final-time edges.
"""

from .common import (
    InfluenceMatrices,
    SolverConfig,
    TpbvpSolution,
    boundary_residual,
    hamiltonian_profile,
    initial_guess,
)
from .successive_approximation import final_time_gradient, solve_sa
from .variation_of_extremals import influence_rhs, shoot, solve_ve
from src.utils.errors import ContractError


def solve_linearized(model, weights, x0, x1, cfg=None, guess=None):
    """The affine solution taken as the edge, with no iterative correction."""
    cfg = cfg or SolverConfig()
    segment, _ = guess if guess is not None else initial_guess(model, x0, x1, weights, cfg)
    return TpbvpSolution(segment=segment, method="linearized", converged=True, iterations=0,
                         reason="affine solution")


# name -> solver function
SOLVERS = {
    'sa': solve_sa,
    've': solve_ve,
    'linearized': solve_linearized,
}


def solve_tpbvp(method, model, weights, x0, x1, cfg=None, guess=None):
    """
    Dispatch to a registered solver.

    Raises:
        ContractError: for an unknown method
        UnreachableStateError: when no initial guess exists
    """
    if method not in SOLVERS:
        raise ContractError(f"unknown solver '{method}' (known: {', '.join(SOLVERS)})")
    return SOLVERS[method](model, weights, x0, x1, cfg=cfg, guess=guess)
