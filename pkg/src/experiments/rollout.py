"""
Open-loop rollout of a planned trajectory.

The recorded controls are replayed through the full nonlinear dynamics with
a zero-order hold between samples, and the executed motion is compared with
the plan.
"""

import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.affine_ocp import trajectory_cost
from src.dynamics import DiffDrive, eval_f
from src.experiments.exporters import CSVExporter, read_table, render_report
from src.numeric import IntegratorConfig, integrate
from src.utils.errors import ContractError, IntegrationDiverged
from src.utils.logger import get_logger

logger = get_logger(__name__)

SUBSTEPS = 4


@dataclass
class RolloutReport:
    """
    Args:
        endpoint_error: |x_rollout(tau) - x_plan(tau)|
        max_deviation: max_t |x_rollout(t) - x_plan(t)|
        planned_cost: Quadrature of the recorded controls
        executed_cost: Cost of the controls as the zero-order hold applies them
        dynamics_defect: max_t |x_plan'(t) - f(x_plan(t), u_plan(t))|
        max_lateral_velocity: Peak sideways speed of the plan (differential drive only)
        diverged: The rollout produced non-finite states
    """
    endpoint_error: float
    max_deviation: float
    planned_cost: float
    executed_cost: float
    dynamics_defect: float
    max_lateral_velocity: float = None
    diverged: bool = False
    frame: pd.DataFrame = None


def split_trajectory(frame, n, m):
    """(times, states, controls) from a trajectory table with columns t, x1..xn, u1..um."""
    if frame.shape[1] != 1 + n + m:
        raise ContractError(f"trajectory table has {frame.shape[1]} columns, expected {1 + n + m}")
    values = frame.to_numpy(dtype=float)
    if len(values) == 0 or not np.all(np.isfinite(values)):
        raise ContractError("trajectory table is empty or holds non-finite values")
    times = values[:, 0]
    if np.any(np.diff(times) <= 0):
        raise ContractError("trajectory times must be strictly increasing")
    return times, values[:, 1:1 + n], values[:, 1 + n:]


def zero_order_hold(model, x_init, times, controls, cfg):
    """
    Integrate x' = f(x, u_k) on each [t_k, t_k+1] with u_k held.

    Returns:
        (N, n) states at the sample times
    """
    states = np.empty((len(times), model.n))
    states[0] = x_init
    for k in range(len(times) - 1):
        u = controls[k]
        span = times[k + 1] - times[k]
        step = IntegratorConfig(dt=min(cfg.dt, span) / SUBSTEPS).uniform(span)
        sol = integrate(lambda t, x, u=u: model.f(x, u), states[k], times[k], times[k + 1], step)
        states[k + 1] = sol.final
    return states


def held_cost(times, controls, weights):
    """
    Running cost of the input as the zero-order hold applies it.

    Each u_k acts over [t_k, t_k+1], so the integral of 1 + 1/2 u^T R u is an
    exact left-rectangle sum; the last sample is never applied.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        return 0.0
    running = weights.running_cost(np.asarray(controls, dtype=float)[:-1])
    return float(np.sum(running * np.diff(times)))


def dynamics_defect(model, times, states, controls):
    """Largest mismatch between the plan's finite-difference velocity and f(x, u)."""
    if len(times) < 2:
        return 0.0, np.zeros_like(states)
    x_dot = np.gradient(states, times, axis=0, edge_order=2 if len(times) > 2 else 1)
    f = np.array([eval_f(model, x, u) for x, u in zip(states, controls)])
    return float(np.max(np.linalg.norm(x_dot - f, axis=1))), x_dot


def rollout(model, weights, x_init, times, states, controls, cfg):
    """
    Replay a plan open loop.

    Args:
        model: SystemModel
        weights: CostWeights
        x_init: Rollout start state
        times, states, controls: Planned samples
        cfg: IntegratorConfig bounding the rollout step

    Returns:
        RolloutReport
    """
    x_init = np.asarray(x_init, dtype=float)
    planned_cost = trajectory_cost(times, controls, weights)
    defect, x_dot = dynamics_defect(model, times, states, controls)
    lateral = None
    if isinstance(model, DiffDrive) and len(times) > 1:
        lateral = float(np.max(np.abs(DiffDrive.lateral_velocity(states, x_dot))))

    diverged = False
    try:
        executed = zero_order_hold(model, x_init, times, controls, cfg)
    except IntegrationDiverged as e:
        logger.warning(1, f"Rollout diverged: {e}")
        executed = np.full_like(states, np.nan)
        executed[0] = x_init
        diverged = True

    deviation = np.linalg.norm(executed - states, axis=1)
    columns = (["t"] + [f"x{i + 1}_plan" for i in range(model.n)]
               + [f"x{i + 1}_rollout" for i in range(model.n)])
    frame = pd.DataFrame(np.column_stack([times, states, executed]), columns=columns)

    return RolloutReport(
        endpoint_error=float(deviation[-1]) if not diverged else np.inf,
        max_deviation=float(np.max(deviation)) if not diverged else np.inf,
        planned_cost=planned_cost,
        executed_cost=held_cost(times, controls, weights),
        dynamics_defect=defect,
        max_lateral_velocity=lateral,
        diverged=diverged,
        frame=frame,
    )


def cmd_rollout(scenario, trajectory_path, out_dir):
    """
    Replay a stored trajectory and write rollout.csv and rollout.txt.

    Returns:
        RolloutReport

    Raises:
        ContractError: for a malformed trajectory table
    """
    logger.info(0, f"ROLLOUT {trajectory_path}")
    try:
        header, frame = read_table(trajectory_path)
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ContractError(f"cannot read trajectory {trajectory_path}: {e}") from e
    if header.get("scenario") not in (None, scenario.digest):
        logger.warning(1, "Trajectory was planned from a different scenario file")
    times, states, controls = split_trajectory(frame, scenario.model.n, scenario.model.m)

    report = rollout(scenario.model, scenario.weights, scenario.x_init, times, states, controls,
                     scenario.planner.integrator)
    stored = header.get("quadrature_cost")
    stored_cost = float(stored) if stored else None
    if stored_cost is not None and abs(report.planned_cost - stored_cost) > 1e-6 * max(1.0, abs(stored_cost)):
        logger.warning(1, f"Recomputed cost {report.planned_cost:.10g} differs from stored {stored_cost:.10g}")

    CSVExporter().export(report.frame, os.path.join(out_dir, "rollout.csv"),
                         {"solver": header.get("solver", "unknown"), "seed": header.get("seed", "unknown"),
                          "scenario": scenario.digest})
    render_report("rollout.txt.j2",
                  {"trajectory": trajectory_path, "header": header, "report": report,
                   "stored_cost": stored_cost, "samples": len(times)},
                  os.path.join(out_dir, "rollout.txt"))
    logger.info(1, f"Endpoint error {report.endpoint_error:.3e}, max deviation {report.max_deviation:.3e}")
    return report
