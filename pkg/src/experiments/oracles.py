"""
Reference solutions used to cross-check the affine solver.
"""

import math
from collections import namedtuple

import numpy as np
from scipy import linalg

from src.utils.errors import ContractError

OracleResult = namedtuple("OracleResult", ["cost", "tau", "costs"])


def exact_discretization(affine, h):
    """
    Zero-order-hold discretization x+ = Ad x + Bd u + cd over a step h.

    Computed from the exponential of the augmented matrix [[A, B, c], [0, 0, 0]].
    """
    n, m = affine.n, affine.m
    M = np.zeros((n + m + 1, n + m + 1))
    M[:n, :n] = affine.A
    M[:n, n:n + m] = affine.B
    M[:n, n + m] = affine.c
    E = linalg.expm(M * h)
    return E[:n, :n], E[:n, n:n + m], E[:n, n + m]


def minimum_energy_cost(affine, x0, x1, tau, segments):
    """
    tau + min sum_k 1/2 h u_k^T R u_k subject to reaching x1 at tau with
    `segments` piecewise-constant controls.

    Returns:
        Cost, +inf when x1 cannot be reached with that control parametrization
    """
    weights = affine.require_weights()
    h = tau / segments
    Ad, Bd, cd = exact_discretization(affine, h)
    n, m = affine.n, affine.m

    # Columns of the reachability map, built from the last step backwards.
    blocks = []
    power = np.eye(n)
    drift = np.zeros(n)
    for _ in range(segments):
        blocks.append(power @ Bd)
        drift += power @ cd
        power = Ad @ power
    blocks.reverse()
    M = np.hstack(blocks)
    residual = np.asarray(x1, dtype=float) - power @ np.asarray(x0, dtype=float) - drift

    W_inv = np.kron(np.eye(segments), weights.R_inv / h)
    gram = M @ W_inv @ M.T
    try:
        solution = linalg.solve(gram, residual, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return math.inf
    mismatch = np.linalg.norm(gram @ solution - residual)
    if not np.all(np.isfinite(solution)) or mismatch > 1e-8 * (1.0 + np.linalg.norm(residual)):
        return math.inf
    return float(tau + 0.5 * residual @ solution)


def direct_transcription_cost(affine, x0, x1, taus, segments=200):
    """
    Oracle for the affine optimal cost: the best piecewise-constant-control
    cost over a grid of arrival times.

    Args:
        affine: AffineModel with weights
        x0: Initial state
        x1: Final state
        taus: Candidate arrival times
        segments: Control pieces per arrival time

    Returns:
        OracleResult(cost, tau, costs per tau)
    """
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or np.any(taus <= 0):
        raise ContractError("oracle needs positive arrival times")
    if segments < 1:
        raise ContractError("oracle needs at least one control segment")
    costs = np.array([minimum_energy_cost(affine, x0, x1, tau, segments) for tau in taus])
    k = int(np.argmin(costs))
    return OracleResult(float(costs[k]), float(taus[k]), costs)
