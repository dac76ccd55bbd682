"""
Affine-quadratic pseudo-metric and the tree queries built on it.

The distance from a to b is the optimal cost of the affine problem obtained by
linearizing the dynamics at one endpoint. It is neither symmetric nor does it
satisfy the triangle inequality. Each tree query linearizes once and scores
every node during a single Gramian sweep.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from src.affine_ocp import (
    BACKWARD,
    DEFAULT_TAU_MAX,
    FORWARD,
    TrajectorySegment,
    optimal_final_time,
    scan_costs,
    solve_affine,
    trajectory_cost,
)
from src.dynamics import linearize
from src.utils.errors import ContractError, SteerFailed, UnreachableStateError
from src.utils.logger import get_logger

logger = get_logger(__name__)

LINEARIZE_FINAL = "final"
LINEARIZE_INITIAL = "initial"


@dataclass
class MetricQueryReport:
    """Per-candidate best cost d_i and its arrival time tau_i from one sweep."""
    costs: np.ndarray
    taus: np.ndarray
    horizon_reached: float
    steps: int


def aqr_distance(model, x_from, x_to, weights, cfg, tau_max=DEFAULT_TAU_MAX, linearize_at=LINEARIZE_FINAL,
                 stats=None):
    """
    Pseudo-distance from x_from to x_to.

    Args:
        model: SystemModel
        x_from: Initial state
        x_to: Final state
        weights: CostWeights
        cfg: IntegratorConfig
        tau_max: Scan limit
        linearize_at: LINEARIZE_FINAL (at x_to, the default) or LINEARIZE_INITIAL (at x_from)

    Returns:
        DistanceResult; rank by `grid_cost`, which is what tree sweeps compare
    """
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    if linearize_at == LINEARIZE_FINAL:
        affine = linearize(model, x_to, weights=weights)
        return optimal_final_time(affine, x_from, x_to, tau_max, cfg, direction=BACKWARD, stats=stats)
    if linearize_at == LINEARIZE_INITIAL:
        affine = linearize(model, x_from, weights=weights)
        return optimal_final_time(affine, x_from, x_to, tau_max, cfg, direction=FORWARD, stats=stats)
    raise ContractError(f"linearize_at must be '{LINEARIZE_FINAL}' or '{LINEARIZE_INITIAL}'")


def _sweep(model, anchor, candidates, weights, cfg, horizon, direction, incumbent_stop, stats):
    affine = linearize(model, anchor, weights=weights)
    scan = scan_costs(affine, anchor, candidates, cfg, horizon, direction, incumbent_stop=incumbent_stop,
                      stats=stats)
    return MetricQueryReport(scan.costs, scan.taus, scan.horizon_reached, scan.steps)


def backward_sweep(states, x_query, model, weights, cfg, horizon, incumbent_stop=True, stats=None):
    """Costs from every row of `states` to x_query, linearized at x_query."""
    return _sweep(model, np.asarray(x_query, dtype=float), states, weights, cfg, horizon, BACKWARD,
                  incumbent_stop, stats)


def forward_sweep(states, x_query, model, weights, cfg, horizon, incumbent_stop=False, stats=None):
    """Costs from x_query to every row of `states`, linearized at x_query."""
    return _sweep(model, np.asarray(x_query, dtype=float), states, weights, cfg, horizon, FORWARD,
                  incumbent_stop, stats)


def nearest(tree, x_rand, model, weights, cfg, tau_max=DEFAULT_TAU_MAX, early_exit=True, stats=None):
    """
    Node minimizing the distance from the node to x_rand.

    Returns:
        Node id (lowest id on ties), or None when no node reaches x_rand within tau_max
    """
    report = backward_sweep(tree.state_matrix(), x_rand, model, weights, cfg, tau_max,
                            incumbent_stop=early_exit, stats=stats)
    index = int(np.argmin(report.costs))
    if not math.isfinite(report.costs[index]):
        logger.debug(2, "nearest: no node reaches the sample within tau_max")
        return None
    return tree.node_ids()[index]


def near_backward(tree, x_new, radius, model, weights, cfg, stats=None):
    """Ids of nodes v with dist(v, x_new) <= radius (candidate parents), in id order."""
    if not radius > 0:
        raise ContractError(f"near radius must be positive, got {radius}")
    report = backward_sweep(tree.state_matrix(), x_new, model, weights, cfg, radius,
                            incumbent_stop=False, stats=stats)
    ids = tree.node_ids()
    return [ids[i] for i in np.flatnonzero(report.costs <= radius)]


def near_forward(tree, x_new, radius, model, weights, cfg, stats=None):
    """Ids of nodes v with dist(x_new, v) <= radius (rewire candidates), in id order."""
    if not radius > 0:
        raise ContractError(f"near radius must be positive, got {radius}")
    report = forward_sweep(tree.state_matrix(), x_new, model, weights, cfg, radius,
                           incumbent_stop=False, stats=stats)
    ids = tree.node_ids()
    return [ids[i] for i in np.flatnonzero(report.costs <= radius)]


def truncate_segment(segment, eta, weights):
    """
    Cut a segment where its running cost first reaches eta.

    Returns:
        TrajectorySegment ending at the first sample whose accumulated cost >= eta
        (the whole segment if it never does)
    """
    running = cumulative_trapezoid(weights.running_cost(segment.controls), x=segment.times, initial=0.0)
    reached = np.flatnonzero(running >= eta)
    if reached.size == 0:
        return segment
    k = max(int(reached[0]), 1)
    times = segment.times[:k + 1]
    controls = segment.controls[:k + 1]
    return TrajectorySegment(
        times=times,
        states=segment.states[:k + 1],
        controls=controls,
        costates=None if segment.costates is None else segment.costates[:k + 1],
        duration=float(times[-1] - times[0]),
        cost=trajectory_cost(times, controls, weights),
    )


def steer(model, x_nearest, x_rand, eta, weights, cfg, tau_max=DEFAULT_TAU_MAX, stats=None):
    """
    Extend from x_nearest toward x_rand at most a cost of eta.

    Returns:
        (x_new, segment); x_new is x_rand itself when the linearized optimal cost
        is within eta, otherwise the state where the running cost reaches eta

    Raises:
        SteerFailed: when x_rand is unreachable within tau_max
    """
    if not eta > 0:
        raise ContractError(f"steering cost bound must be positive, got {eta}")
    x_nearest = np.asarray(x_nearest, dtype=float)
    x_rand = np.asarray(x_rand, dtype=float)
    affine = linearize(model, x_nearest, weights=weights)
    result = optimal_final_time(affine, x_nearest, x_rand, tau_max, cfg, direction=FORWARD, stats=stats)
    if not result.reachable:
        raise SteerFailed("sample unreachable within tau_max")
    try:
        segment = solve_affine(affine, x_nearest, x_rand, cfg, tau=result.tau_star, stats=stats)
    except UnreachableStateError as e:
        raise SteerFailed(str(e)) from e
    if result.cost <= eta:
        return x_rand.copy(), segment
    segment = truncate_segment(segment, eta, weights)
    return segment.end.copy(), segment
