"""
Invariant suites behind `kinoplan.py verify <suite>`.

Each suite returns a list of CheckResult; a suite passes when every check does.
"""

import math
import os
from collections import namedtuple

import numpy as np
import pandas as pd

from src.affine_ocp import cost_at, optimal_final_time, propagate_gramian, solve_affine
from src.dynamics import CostWeights, DiffDrive, DoubleIntegrator, LinearSystem, Pendulum, linearize
from src.experiments.oracles import direct_transcription_cost
from src.experiments.rollout import rollout
from src.experiments.runner import run_batch, run_plan
from src.loader import load_scenario
from src.metric import LINEARIZE_INITIAL, aqr_distance, nearest, near_backward, near_forward
from src.numeric import IntegratorConfig
from src.planner import PlanTree
from src.tpbvp import SolverConfig, final_time_gradient, hamiltonian_profile, shoot, solve_sa, solve_ve
from src.utils.errors import ContractError, KinoplanError
from src.utils.logger import get_logger
from src.world import classify_homotopy

logger = get_logger(__name__)

CheckResult = namedtuple("CheckResult", ["name", "passed", "detail"])

FD_EPS = 1e-6

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))), "scenarios")


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def _relative_error(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


# Gradients

def influence_error(model, weights, x0, lam0, tau, cfg):
    """Largest relative gap between P_x, P_lambda and central differences of the shooting map."""
    _, influence = shoot(model, weights, x0, lam0, tau, cfg)
    P_x, P_lam = influence.final
    worst = 0.0
    for i in range(model.n):
        step = np.zeros(model.n)
        step[i] = FD_EPS
        plus, _ = shoot(model, weights, x0, lam0 + step, tau, cfg, with_influence=False)
        minus, _ = shoot(model, weights, x0, lam0 - step, tau, cfg, with_influence=False)
        fd_x = (plus.states[-1] - minus.states[-1]) / (2.0 * FD_EPS)
        fd_lam = (plus.costates[-1] - minus.costates[-1]) / (2.0 * FD_EPS)
        worst = max(worst, _relative_error(P_x[:, i], fd_x), _relative_error(P_lam[:, i], fd_lam))
    return worst


def final_time_gradient_error(model, weights, x0, x1, tau, cfg):
    """
    Relative gap between the analytic dJ/dtau of the affine optimum at tau and
    a central difference of C(tau) on the Gramian grid.
    """
    integ = cfg.integrator
    affine = linearize(model, x0, weights=weights)
    segment = solve_affine(affine, x0, x1, integ, tau=tau)
    lam = segment.costates[-1]
    analytic = final_time_gradient(model, x1, lam, lam, affine, weights, u_prev=segment.controls[-1])
    table = propagate_gramian(affine, x0, tau + 2 * integ.dt, cfg=integ)
    k = table.index_of(tau)
    t_m, t_p = table.times[k - 1], table.times[k + 1]
    numeric = (cost_at(table, x1, t_p) - cost_at(table, x1, t_m)) / (t_p - t_m)
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def suite_gradients(seed=0, trials=5):
    rng = _rng(seed)
    cfg = SolverConfig(integrator=IntegratorConfig(dt=0.005))
    results = []

    pendulum = Pendulum()
    worst = max(influence_error(pendulum, CostWeights(1.0), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), 1.0, cfg)
                for _ in range(trials))
    results.append(CheckResult("influence matrices match finite differences (pendulum)", worst <= 1e-3,
                               f"max relative error {worst:.3e}"))

    drive = DiffDrive()
    worst = 0.0
    for _ in range(trials):
        x0 = np.array([0.0, 0.0, rng.uniform(-1, 1), rng.uniform(0.5, 1.5), rng.uniform(-0.3, 0.3)])
        worst = max(worst, influence_error(drive, CostWeights(np.eye(2)), x0, rng.uniform(-0.5, 0.5, 5), 1.0, cfg))
    results.append(CheckResult("influence matrices match finite differences (diff drive)", worst <= 1e-3,
                               f"max relative error {worst:.3e}"))

    integ_cfg = SolverConfig(integrator=IntegratorConfig(dt=1e-3))
    worst = 0.0
    for _ in range(trials):
        model = LinearSystem.random(rng, 2, 1, scale=0.5)
        x0, x1 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        worst = max(worst, final_time_gradient_error(model, CostWeights(1.0), x0, x1, 1.5, integ_cfg))
    results.append(CheckResult("final-time gradient matches dC/dtau (affine)", worst <= 1e-3,
                               f"max relative error {worst:.3e}"))
    return results


# Oracle

def suite_oracle(seed=0, trials=5):
    rng = _rng(seed)
    results = []
    integ = IntegratorConfig(dt=1e-3)

    tau = 1.0
    table = propagate_gramian(linearize(DoubleIntegrator(), np.zeros(2), weights=CostWeights(1.0)),
                              np.zeros(2), tau, cfg=integ)
    expected = np.array([[tau ** 3 / 3, tau ** 2 / 2], [tau ** 2 / 2, tau]])
    gap = float(np.max(np.abs(table.G[-1] - expected)))
    results.append(CheckResult("double-integrator Gramian matches its closed form", gap <= 1e-8,
                               f"max abs error {gap:.3e}"))

    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    affine = linearize(DoubleIntegrator(), x0, weights=CostWeights(1.0))
    result = optimal_final_time(affine, x0, x1, cfg=integ)
    oracle = direct_transcription_cost(affine, x0, x1, np.linspace(0.8, 1.2, 81) * result.tau_star)
    gap = abs(result.cost - oracle.cost) / oracle.cost
    results.append(CheckResult("affine cost matches direct transcription (double integrator)", gap <= 5e-3,
                               f"affine {result.cost:.6f} oracle {oracle.cost:.6f} ({100 * gap:.3f}%)"))

    cfg = SolverConfig(integrator=IntegratorConfig(dt=0.01), boundary_tol=1e-7)
    worst = 0.0
    failures = 0
    for _ in range(trials):
        model = LinearSystem.random(rng, 2, 1, scale=0.5)
        weights = CostWeights(1.0)
        x0, x1 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        try:
            reference = solve_affine(linearize(model, x0, weights=weights), x0, x1, cfg.integrator)
        except KinoplanError:
            continue
        for solver in (solve_sa, solve_ve):
            solution = solver(model, weights, x0, x1, cfg)
            if not solution.converged:
                failures += 1
                continue
            worst = max(worst, abs(solution.cost - reference.cost) / reference.cost)
    results.append(CheckResult("iterative solvers reproduce the affine optimum", failures == 0 and worst <= 1e-6,
                               f"{failures} unconverged, max relative cost gap {worst:.3e}"))
    return results


# Hamiltonian

def _pendulum_problem(rng):
    x0 = rng.uniform(-1, 1, 2)
    return Pendulum(), CostWeights(1.0), x0, x0 + rng.uniform(-0.5, 0.5, 2)


def _diff_drive_problem(rng):
    x0 = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    x1 = np.array([1.0, 0.2, 0.2, 1.0, 0.0]) + rng.uniform(-0.1, 0.1, 5)
    return DiffDrive(), CostWeights(np.eye(2)), x0, x1


def suite_hamiltonian(seed=0, trials=10):
    rng = _rng(seed)
    cfg = SolverConfig()
    bound = cfg.integrator.drift_bound
    results = []
    for label, problem in (("pendulum", _pendulum_problem), ("diff drive", _diff_drive_problem)):
        converged = 0
        worst_abs = 0.0
        worst_spread = 0.0
        for _ in range(trials):
            model, weights, x0, x1 = problem(rng)
            try:
                solution = solve_ve(model, weights, x0, x1, cfg)
            except KinoplanError as e:
                logger.debug(2, f"{label}: {e}")
                continue
            if not solution.converged:
                continue
            converged += 1
            H = hamiltonian_profile(model, solution.segment.states, solution.segment.costates, weights)
            worst_abs = max(worst_abs, float(np.max(np.abs(H))))
            worst_spread = max(worst_spread, float(np.ptp(H)))
        passed = converged > 0 and worst_abs <= cfg.hamiltonian_tol and worst_spread <= bound
        results.append(CheckResult(f"H vanishes along converged extremals ({label})", passed,
                                   f"{converged}/{trials} converged, max |H| {worst_abs:.3e}, "
                                   f"spread {worst_spread:.3e} (bound {bound:.1e})"))
    return results


# Metric

def random_tree(rng, model, lower, upper, size):
    tree = PlanTree(rng.uniform(lower, upper), control_dim=model.m)
    for _ in range(size - 1):
        tree.add_node(rng.uniform(lower, upper), 0, None, 0.0)
    return tree


def metric_mismatches(tree, query, model, weights, cfg, tau_max, radius):
    """Number of disagreements between tree queries and pairwise distances."""
    states = tree.state_matrix()
    to_query = [aqr_distance(model, v, query, weights, cfg, tau_max).grid_cost for v in states]
    mismatches = 0

    costs = np.array(to_query)
    expected = int(np.argmin(costs)) if np.isfinite(costs).any() else None
    if nearest(tree, query, model, weights, cfg, tau_max, early_exit=True) != expected:
        mismatches += 1
    if nearest(tree, query, model, weights, cfg, tau_max, early_exit=False) != expected:
        mismatches += 1

    backward = [aqr_distance(model, v, query, weights, cfg, radius).grid_cost for v in states]
    if near_backward(tree, query, radius, model, weights, cfg) != [i for i, c in enumerate(backward) if c <= radius]:
        mismatches += 1
    forward = [aqr_distance(model, query, v, weights, cfg, radius, linearize_at=LINEARIZE_INITIAL).grid_cost
               for v in states]
    if near_forward(tree, query, radius, model, weights, cfg) != [i for i, c in enumerate(forward) if c <= radius]:
        mismatches += 1
    return mismatches


def suite_metric(seed=0, trials=50, size=20):
    rng = _rng(seed)
    cfg = IntegratorConfig(dt=0.01)
    results = []
    for label, model, weights, lower, upper in (
        ("double integrator", DoubleIntegrator(), CostWeights(1.0), [-2, -2], [2, 2]),
        ("pendulum", Pendulum(), CostWeights(1.0), [-math.pi, -2], [math.pi, 2]),
    ):
        mismatches = 0
        for _ in range(trials):
            tree = random_tree(rng, model, lower, upper, size)
            mismatches += metric_mismatches(tree, rng.uniform(lower, upper), model, weights, cfg, 10.0, 3.0)
        results.append(CheckResult(f"tree queries equal pairwise distances ({label})", mismatches == 0,
                                   f"{mismatches} mismatches over {trials} trees of {size} nodes"))
    return results


# Rollout

def paired_rollouts(scenario, seeds, solvers):
    """
    Plan every seed with every solver and replay each best path open loop.

    Returns:
        DataFrame with seed, solver, feasible, endpoint_error, planned_cost and
        executed_cost per plan; infeasible plans carry an infinite error
    """
    rows = []
    for seed in seeds:
        for solver in solvers:
            trial = scenario.with_overrides(seed=seed, solver=solver)
            result, _, _ = run_plan(trial)
            best = result.best
            if best is None:
                rows.append({"seed": seed, "solver": solver, "feasible": False, "endpoint_error": math.inf,
                             "planned_cost": math.inf, "executed_cost": math.inf})
                continue
            report = rollout(trial.model, trial.weights, trial.x_init, best.times, best.states, best.controls,
                             trial.planner.integrator)
            rows.append({"seed": seed, "solver": solver, "feasible": True, "endpoint_error": report.endpoint_error,
                         "planned_cost": report.planned_cost, "executed_cost": report.executed_cost})
            logger.debug(2, f"seed {seed} {solver}: endpoint error {report.endpoint_error:.3e}")
    return pd.DataFrame(rows)


def rollout_checks(frame, goal_norm, baseline="linearized", share=0.9):
    """
    Open-loop accuracy of each solver's plans against the baseline's.

    Args:
        frame: Output of paired_rollouts
        goal_norm: |x_goal|; the endpoint error bound is 1e-2 (1 + goal_norm)
        baseline: Solver the others are compared with
        share: Fraction of paired seeds on which a solver must beat the baseline
    """
    bound = 1e-2 * (1.0 + goal_norm)
    base = frame[frame["solver"] == baseline].set_index("seed")["endpoint_error"]
    results = []
    for solver in sorted(set(frame["solver"]) - {baseline}):
        errors = frame[frame["solver"] == solver].set_index("seed")["endpoint_error"]
        worst = float(errors.max())
        results.append(CheckResult(f"{solver} plans hold open loop", worst <= bound,
                                   f"max endpoint error {worst:.3e} (bound {bound:.3e})"))
        seeds = errors.index.intersection(base.index)
        wins = int((errors[seeds] < base[seeds]).sum())
        needed = math.ceil(round(share * len(seeds), 9))
        results.append(CheckResult(f"{solver} rollouts beat the {baseline} baseline", len(seeds) > 0 and wins >= needed,
                                   f"{wins}/{len(seeds)} paired seeds (need {needed})"))
    return results


def suite_rollout(seed=0, trials=10, scenario_path=None):
    scenario = load_scenario(scenario_path or os.path.join(SCENARIO_DIR, "pendulum_swingup.scn"))
    goal = 0.5 * (scenario.goal.lower + scenario.goal.upper)
    frame = paired_rollouts(scenario, [seed + i for i in range(trials)], ("sa", "ve", "linearized"))
    return rollout_checks(frame, float(np.linalg.norm(goal)))


# Trend

TREND_CHECKPOINTS = (500, 1000, 3000, 5000)


def trend_checks(report, settle_from=1000):
    """
    Anytime behaviour of a batch: more trials feasible, cheaper and tighter
    best costs as the tree grows.

    Args:
        report: BatchReport
        settle_from: First checkpoint of the variance check
    """
    summary = report.summary_frame()
    feasible = summary["feasible"].to_numpy()
    mean = summary["mean_feasible"].to_numpy()
    variance = summary["variance"][summary["nodes"] >= settle_from].to_numpy()
    trials = len(report.seeds)
    return [
        CheckResult("feasible fraction never drops and reaches every trial",
                    bool(np.all(np.diff(feasible) >= 0) and feasible[-1] == trials),
                    f"feasible {list(feasible)} of {trials}"),
        CheckResult("mean best cost decreases at every checkpoint",
                    bool(np.all(np.isfinite(mean)) and np.all(np.diff(mean) < 0)),
                    "means " + ", ".join(f"{m:.4g}" for m in mean)),
        CheckResult(f"cost variance decreases from {settle_from} nodes on",
                    bool(len(variance) > 1 and np.all(np.isfinite(variance)) and np.all(np.diff(variance) < 0)),
                    "variances " + ", ".join(f"{v:.4g}" for v in variance)),
    ]


def suite_trend(seed=0, trials=20, checkpoints=TREND_CHECKPOINTS, scenario_path=None):
    scenario = load_scenario(scenario_path or os.path.join(SCENARIO_DIR, "diffdrive_cluttered25.scn"))
    report = run_batch(scenario.with_overrides(seed=seed), trials, checkpoints)
    return trend_checks(report, settle_from=sorted(checkpoints)[min(1, len(checkpoints) - 1)])


# Homotopy

# scenario file -> homotopy class its cost weighting should produce
HOMOTOPY_SCENARIOS = {
    "scara_over.scn": "over",
    "scara_around.scn": "around",
}


def homotopy_outcomes(scenario, seeds):
    """Homotopy class and arrival time of the best path for every seed (None / NaN when infeasible)."""
    rows = []
    for seed in seeds:
        result, world, _ = run_plan(scenario.with_overrides(seed=seed))
        best = result.best
        rows.append({
            "seed": seed,
            "homotopy": classify_homotopy(best, world, scenario.model) if best is not None else None,
            "arrival_time": float(best.duration) if best is not None else math.nan,
        })
    return pd.DataFrame(rows)


def homotopy_checks(outcomes):
    """
    Args:
        outcomes: Expected homotopy class -> homotopy_outcomes frame of the
            scenario weighted towards it
    """
    results = []
    arrival = {}
    for expected, frame in outcomes.items():
        hits = frame["homotopy"] == expected
        count = int(hits.sum())
        results.append(CheckResult(f"weighting for '{expected}' plans {expected} the wall", 2 * count > len(frame),
                                   f"{count}/{len(frame)} seeds"))
        arrival[expected] = float(frame.loc[hits, "arrival_time"].mean()) if count else math.nan
    around, over = arrival.get("around", math.nan), arrival.get("over", math.nan)
    results.append(CheckResult("the detour arrives sooner than the path over the wall", bool(around < over),
                               f"around {around:.4f} s, over {over:.4f} s"))
    return results


def suite_homotopy(seed=0, trials=3):
    seeds = [seed + i for i in range(trials)]
    outcomes = {}
    for name, expected in HOMOTOPY_SCENARIOS.items():
        outcomes[expected] = homotopy_outcomes(load_scenario(os.path.join(SCENARIO_DIR, name)), seeds)
    return homotopy_checks(outcomes)


# name -> suite function
SUITES = {
    'gradients': suite_gradients,
    'oracle': suite_oracle,
    'hamiltonian': suite_hamiltonian,
    'metric': suite_metric,
    'rollout': suite_rollout,
    'trend': suite_trend,
    'homotopy': suite_homotopy,
}


def run_suite(name, seed=0, trials=None):
    """
    Run one suite and log a line per check.

    Args:
        name: Key of SUITES
        seed: Seed of the Philox generator drawing the random instances
        trials: Random instances per check (the suite default when None)

    Returns:
        (all passed, list of CheckResult)
    """
    if name not in SUITES:
        raise ContractError(f"unknown suite '{name}' (known: {', '.join(SUITES)})")
    logger.info(0, f"VERIFY {name}")
    kwargs = {} if trials is None else {"trials": int(trials)}
    results = SUITES[name](seed=seed, **kwargs)
    for result in results:
        log = logger.info if result.passed else logger.error
        log(1, f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    return all(r.passed for r in results), results
