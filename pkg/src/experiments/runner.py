"""
Run orchestration: single plans and seeded Monte-Carlo batches, with their
artifacts.

Artifacts under the output directory:
    trajectory.csv   best path (t, x1..xn, u1..um)
    tree.csv         node_id, parent_id, cost, x1..xn
    summary.txt      deterministic run summary
    timing.txt       wall time (not part of the reproducible set)
    tree_<N>.csv / best_<N>.csv   optional snapshots
    trials.csv, batch_report.csv, batch_report.txt   batch results
"""

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
import pandas as pd

from src.affine_ocp import trajectory_cost
from src.experiments.exporters import CSVExporter, render_report, tree_frame, trajectory_frame
from src.planner import RRTStarPlanner
from src.utils.errors import ContractError, KinoplanError
from src.utils.logger import get_logger
from src.world import classify_homotopy

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2

THREADS_ENV = "KINOPLAN_THREADS"


def artifact_header(scenario, **extra):
    header = {
        "seed": scenario.planner.sampler.seed,
        "solver": scenario.planner.solver,
        "system": scenario.system_name,
        "scenario": scenario.digest,
    }
    header.update(extra)
    return header


def control_bound_report(segment, u_max):
    """
    Post-hoc check of |u_j(t)| <= u_max_j along a path.

    Returns:
        dict(samples, violations, peak_ratio) or None when no bound is declared
    """
    if u_max is None or segment is None:
        return None
    bound = np.asarray(u_max, dtype=float)
    ratio = np.abs(segment.controls) / bound
    return {
        "samples": int(len(segment.times)),
        "violations": int(np.count_nonzero(np.any(ratio > 1.0, axis=1))),
        "peak_ratio": float(ratio.max()) if ratio.size else 0.0,
    }


def summary_context(scenario, result, world):
    best = result.best
    stats = result.statistics
    context = {
        "scenario": scenario,
        "planner": scenario.planner,
        "nodes": len(result.tree),
        "iterations": result.iterations,
        "goal_nodes": len(result.tree.goal_ids),
        "feasible": result.feasible,
        "best_cost": result.best_cost,
        "arrival_time": best.duration if best is not None else math.nan,
        "path_samples": len(best.times) if best is not None else 0,
        "stats": stats,
        "controls": control_bound_report(best, scenario.planner.u_max),
        "homotopy": classify_homotopy(best, world, scenario.model) if best is not None else None,
        "snapshots": sorted(result.snapshots),
    }
    return context


def write_plan_artifacts(scenario, result, world, out_dir, wall_time):
    """Write the tree, best trajectory, snapshots and summaries of one run."""
    exporter = CSVExporter()
    n = scenario.model.n
    best = result.best

    tree_header = artifact_header(scenario, nodes=len(result.tree))
    exporter.export(tree_frame(result.tree.table(), n), os.path.join(out_dir, "tree.csv"), tree_header)

    if best is not None:
        header = artifact_header(
            scenario,
            cost=repr(float(result.best_cost)),
            quadrature_cost=repr(trajectory_cost(best.times, best.controls, scenario.weights)),
            duration=repr(float(best.duration)),
        )
        exporter.export(trajectory_frame(best), os.path.join(out_dir, "trajectory.csv"), header)

    for count, (rows, snapshot_best) in sorted(result.snapshots.items()):
        exporter.export(tree_frame(rows, n), os.path.join(out_dir, f"tree_{count}.csv"),
                        artifact_header(scenario, nodes=count))
        if snapshot_best is not None:
            exporter.export(trajectory_frame(snapshot_best), os.path.join(out_dir, f"best_{count}.csv"),
                            artifact_header(scenario, nodes=count, cost=repr(float(snapshot_best.cost))))

    render_report("summary.txt.j2", summary_context(scenario, result, world), os.path.join(out_dir, "summary.txt"))
    with open(os.path.join(out_dir, "timing.txt"), "w", encoding="utf-8") as f:
        f.write(f"wall_time_s: {wall_time:.3f}\n")


def run_plan(scenario):
    """
    Plan once.

    Returns:
        (PlanResult, World, wall time in seconds)
    """
    world = scenario.world()
    planner = RRTStarPlanner(scenario.model, world, scenario.weights, scenario.planner)
    start = time.perf_counter()
    result = planner.plan(scenario.x_init)
    return result, world, time.perf_counter() - start


def cmd_plan(scenario, out_dir):
    """
    Plan and write artifacts.

    Returns:
        EXIT_OK when a feasible path was found, EXIT_INFEASIBLE otherwise
    """
    logger.info(0, f"PLAN {scenario.path} (seed {scenario.planner.sampler.seed}, solver {scenario.planner.solver})")
    result, world, wall_time = run_plan(scenario)
    write_plan_artifacts(scenario, result, world, out_dir, wall_time)
    logger.info(1, f"Artifacts written to {out_dir} in {wall_time:.2f} s")
    if not result.feasible:
        logger.warning(1, "No feasible path found")
        return EXIT_INFEASIBLE
    logger.info(1, f"Best cost {result.best_cost:.6g}")
    return EXIT_OK


# Batches

def checkpoint_costs(best_by_nodes, checkpoints, final_cost):
    """
    Incumbent best cost when the tree held each checkpoint's node count.

    A checkpoint the tree never reached takes the final cost.
    """
    out = []
    for checkpoint in checkpoints:
        cost = math.inf if best_by_nodes else final_cost
        for nodes, best in best_by_nodes:
            if nodes > checkpoint:
                break
            cost = best
        out.append(cost)
    return out


def run_trial(scenario, seed, checkpoints):
    """One batch trial; top level so worker processes can import it."""
    trial = scenario.with_overrides(seed=seed, nodes=max(checkpoints))
    result, _, _ = run_plan(trial)
    return checkpoint_costs(result.best_by_nodes, checkpoints, result.best_cost)


@dataclass
class BatchReport:
    """
    Best cost of every trial at every checkpoint.

    Args:
        checkpoints: Sorted node counts
        seeds: Trial seeds (base seed + trial index)
        costs: (trials, checkpoints) array, inf where a trial had no solution
    """
    checkpoints: tuple
    seeds: tuple
    costs: np.ndarray

    def trials_frame(self):
        frame = pd.DataFrame(self.costs, columns=[str(c) for c in self.checkpoints])
        frame.insert(0, "seed", list(self.seeds))
        return frame

    def summary_frame(self):
        """
        nodes, feasible, mean, mean_feasible, variance per checkpoint.

        `mean` is inf as soon as one trial is infeasible; the other statistics
        cover feasible trials, with sample variance (NaN below two trials).
        """
        finite = pd.DataFrame(self.costs, columns=list(self.checkpoints)).replace(np.inf, np.nan)
        return pd.DataFrame({
            "nodes": list(self.checkpoints),
            "feasible": finite.count().to_numpy(),
            "mean": np.where(finite.count() == len(self.seeds), finite.mean(), np.inf),
            "mean_feasible": finite.mean().to_numpy(),
            "variance": finite.var(ddof=1).to_numpy(),
        })


def batch_workers(trials):
    """Worker count: KINOPLAN_THREADS when set, else the logical core count."""
    value = os.environ.get(THREADS_ENV)
    try:
        workers = int(value) if value else (os.cpu_count() or 1)
    except ValueError:
        raise ContractError(f"{THREADS_ENV} must be an integer, got '{value}'")
    return max(1, min(workers, trials))


def run_batch(scenario, trials, checkpoints):
    """
    K seeded trials; results are joined in trial order whatever the schedule.

    Raises:
        KinoplanError: naming the seed of the first trial that crashed
    """
    if trials < 1:
        raise ContractError("a batch needs at least one trial")
    checkpoints = tuple(sorted(set(int(c) for c in checkpoints)))
    if not checkpoints or checkpoints[0] < 1:
        raise ContractError("checkpoints must be positive node counts")
    base = scenario.planner.sampler.seed
    seeds = tuple(base + i for i in range(trials))
    costs = [None] * trials
    workers = batch_workers(trials)
    logger.info(1, f"Running {trials} trials on {workers} worker(s), checkpoints {list(checkpoints)}")

    if workers == 1:
        for i, seed in enumerate(seeds):
            try:
                costs[i] = run_trial(scenario, seed, checkpoints)
            except Exception as e:
                raise KinoplanError(f"trial {i} (seed {seed}) crashed: {e}") from e
            logger.info(2, f"trial {i} (seed {seed}) done: final {costs[i][-1]:.6g}")
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run_trial, scenario, seed, checkpoints): i for i, seed in enumerate(seeds)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    costs[i] = future.result()
                except Exception as e:
                    executor.shutdown(wait=False, cancel_futures=True)
                    raise KinoplanError(f"trial {i} (seed {seeds[i]}) crashed: {e}") from e
                logger.info(2, f"trial {i} (seed {seeds[i]}) done: final {costs[i][-1]:.6g}")

    return BatchReport(checkpoints, seeds, np.array(costs, dtype=float))


def cmd_batch(scenario, trials, checkpoints, out_dir):
    """
    Run a batch and write trials.csv, batch_report.csv and batch_report.txt.

    Returns:
        BatchReport
    """
    logger.info(0, f"BATCH {scenario.path} ({trials} trials, solver {scenario.planner.solver})")
    start = time.perf_counter()
    report = run_batch(scenario, trials, checkpoints)
    wall_time = time.perf_counter() - start

    exporter = CSVExporter()
    header = artifact_header(scenario, trials=trials)
    exporter.export(report.trials_frame(), os.path.join(out_dir, "trials.csv"), header)
    summary = report.summary_frame()
    exporter.export(summary, os.path.join(out_dir, "batch_report.csv"), header)
    render_report("batch_report.txt.j2",
                  {"scenario": scenario, "trials": trials, "seeds": report.seeds,
                   "rows": summary.to_dict("records")},
                  os.path.join(out_dir, "batch_report.txt"))
    with open(os.path.join(out_dir, "timing.txt"), "w", encoding="utf-8") as f:
        f.write(f"wall_time_s: {wall_time:.3f}\n")
    logger.info(1, f"Batch finished in {wall_time:.2f} s")
    return report
