import math
import os

import numpy as np
import pandas as pd
import pytest

from kinoplan import main
from src.affine_ocp import TrajectorySegment, solve_affine
from src.dynamics import LinearSystem, linearize
from src.experiments.exporters import CSVExporter, read_table
from src.experiments.exporters.csv_exporter import format_float
from src.experiments.oracles import direct_transcription_cost, minimum_energy_cost
from src.experiments.rollout import dynamics_defect, held_cost, rollout, split_trajectory
from src.experiments.runner import (
    THREADS_ENV,
    BatchReport,
    batch_workers,
    checkpoint_costs,
    control_bound_report,
    run_batch,
)
from src.experiments.verify import SUITES, homotopy_checks, rollout_checks, run_suite, trend_checks
from src.loader import load_scenario
from src.numeric import IntegratorConfig
from src.utils.errors import ContractError

TINY = """\
[system]
name = double_integrator

[init]
x = 0, 0

[goal]
lower = 0.9, -0.1
upper = 1.1, 0.1

[sampling]
lower = -2, -2
upper = 2, 2
goal_bias = 0.5

[planner]
nodes = 10
solver = linearized
seed = 7

[solver]
dt = 0.05
tau_max = 10
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.scn"
    path.write_text(TINY)
    return str(path)


def test_csv_tables_read_back_exactly(tmp_path):
    frame = pd.DataFrame({"a": [0.1, 1.0 / 3.0, math.pi], "b": [1e-300, -2.5, 7.0]})
    path = str(tmp_path / "nested" / "table.csv")
    CSVExporter().export(frame, path, {"seed": 7, "solver": "ve"})
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[:3] == ["# seed: 7", "# solver: ve", "# columns: a,b"]
    header, back = read_table(path)
    assert header == {"seed": "7", "solver": "ve", "columns": "a,b"}
    np.testing.assert_array_equal(back.to_numpy(), frame.to_numpy())


def test_format_float_keeps_seventeen_digits():
    assert float(format_float(0.1)) == 0.1
    assert format_float(0.5) == "0.5"


def test_batch_summary_statistics():
    costs = np.array([[1.0, math.inf], [3.0, 2.0], [2.0, 4.0]])
    summary = BatchReport((4, 8), (0, 1, 2), costs).summary_frame()
    assert list(summary["nodes"]) == [4, 8]
    assert list(summary["feasible"]) == [3, 2]
    assert summary["mean"][0] == pytest.approx(2.0)
    assert summary["mean"][1] == math.inf
    np.testing.assert_allclose(summary["mean_feasible"], [2.0, 3.0])
    np.testing.assert_allclose(summary["variance"], [1.0, 2.0])


def test_batch_summary_with_no_feasible_trial():
    summary = BatchReport((4,), (0, 1), np.full((2, 1), math.inf)).summary_frame()
    assert summary["feasible"][0] == 0
    assert summary["mean"][0] == math.inf
    assert math.isnan(summary["mean_feasible"][0])
    assert math.isnan(summary["variance"][0])


def test_trials_frame_lists_seeds():
    frame = BatchReport((4, 8), (7, 8), np.array([[1.0, 0.5], [2.0, 1.5]])).trials_frame()
    assert list(frame.columns) == ["seed", "4", "8"]
    assert list(frame["seed"]) == [7, 8]


def test_checkpoint_costs():
    history = [(3, 5.0), (6, 4.0)]
    assert checkpoint_costs(history, [2, 3, 5, 10], 4.0) == [math.inf, 5.0, 5.0, 4.0]
    assert checkpoint_costs([], [5, 10], math.inf) == [math.inf, math.inf]


def test_control_bound_report():
    segment = TrajectorySegment(np.array([0.0, 1.0]), np.zeros((2, 1)), np.array([[1.0], [-3.0]]))
    report = control_bound_report(segment, (2.0,))
    assert report == {"samples": 2, "violations": 1, "peak_ratio": 1.5}
    assert control_bound_report(segment, None) is None


def test_batch_workers_follow_the_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert batch_workers(2) == 2
    assert batch_workers(8) == 3
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ContractError):
        batch_workers(2)


def test_oracle_matches_the_affine_optimum(double_integrator, unit_weights, fine):
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    affine = linearize(double_integrator, x0, weights=unit_weights)
    # Fixed arrival time: 1 + 1/2 * integral of (6 - 12t)^2 = 7.
    assert minimum_energy_cost(affine, x0, x1, 1.0, 200) == pytest.approx(7.0, rel=1e-3)
    oracle = direct_transcription_cost(affine, x0, x1, np.linspace(1.9, 2.2, 61))
    reference = solve_affine(affine, x0, x1, fine)
    assert oracle.cost == pytest.approx(reference.cost, rel=1e-3)
    assert oracle.tau == pytest.approx(18.0 ** 0.25, abs=0.02)
    with pytest.raises(ContractError):
        direct_transcription_cost(affine, x0, x1, [0.0, 1.0])


def test_oracle_reports_unreachable_targets(unit_weights):
    model = LinearSystem(np.zeros((2, 2)), [[1.0], [0.0]])
    affine = linearize(model, np.zeros(2), weights=unit_weights)
    assert minimum_energy_cost(affine, np.zeros(2), np.array([0.0, 1.0]), 1.0, 20) == math.inf


def test_rollout_follows_an_exact_plan(double_integrator, unit_weights, coarse):
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    segment = solve_affine(linearize(double_integrator, x0, weights=unit_weights), x0, x1, coarse)
    report = rollout(double_integrator, unit_weights, x0, segment.times, segment.states, segment.controls, coarse)
    assert not report.diverged
    assert report.endpoint_error < 0.05
    assert report.max_deviation >= report.endpoint_error
    assert report.dynamics_defect < 1e-2
    assert report.planned_cost == pytest.approx(segment.cost, rel=1e-9)
    assert report.executed_cost == pytest.approx(held_cost(segment.times, segment.controls, unit_weights))
    assert report.executed_cost == pytest.approx(report.planned_cost, rel=5e-2)
    assert report.max_lateral_velocity is None
    assert len(report.frame) == len(segment.times)


def test_dynamics_defect_flags_inconsistent_plans(double_integrator):
    times = np.linspace(0.0, 1.0, 11)
    states = np.column_stack([times, np.zeros_like(times)])
    defect, _ = dynamics_defect(double_integrator, times, states, np.zeros((11, 1)))
    # Position grows at unit rate while the recorded velocity stays zero.
    assert defect == pytest.approx(1.0)


def test_split_trajectory_rejects_malformed_tables():
    good = pd.DataFrame([[0.0, 0.0, 0.0, 1.0], [0.1, 0.0, 0.1, 1.0]])
    times, states, controls = split_trajectory(good, 2, 1)
    assert states.shape == (2, 2) and controls.shape == (2, 1)
    with pytest.raises(ContractError):
        split_trajectory(good, 3, 1)
    with pytest.raises(ContractError):
        split_trajectory(good.iloc[::-1], 2, 1)
    with pytest.raises(ContractError):
        split_trajectory(good.replace(1.0, np.nan), 2, 1)


def test_held_cost_applies_each_sample_over_its_interval(unit_weights):
    times = np.array([0.0, 1.0, 2.0])
    controls = np.array([[1.0], [3.0], [5.0]])
    # (1 + 1/2) + (1 + 9/2); the final sample is never held.
    assert held_cost(times, controls, unit_weights) == pytest.approx(7.0)
    report = rollout(LinearSystem([[0.0]], [[1.0]]), unit_weights, [0.0], times,
                     np.array([[0.0], [2.0], [6.0]]), controls, IntegratorConfig(dt=0.1))
    assert report.executed_cost == pytest.approx(7.0)
    assert report.planned_cost != pytest.approx(report.executed_cost)
    assert held_cost([0.0], [[2.0]], unit_weights) == 0.0


def paired_frame(baseline_errors, sa_errors=None, ve_errors=None):
    seeds = range(len(baseline_errors))
    rows = []
    for solver, errors in (("linearized", baseline_errors), ("sa", sa_errors), ("ve", ve_errors)):
        errors = errors if errors is not None else [1e-3] * len(baseline_errors)
        rows += [{"seed": s, "solver": solver, "endpoint_error": e} for s, e in zip(seeds, errors)]
    return pd.DataFrame(rows)


def test_rollout_checks_pass_with_nine_wins_in_ten():
    baseline = [1e-4] + [0.1] * 9
    results = rollout_checks(paired_frame(baseline), math.pi)
    assert [r.name for r in results] == [
        "sa plans hold open loop",
        "sa rollouts beat the linearized baseline",
        "ve plans hold open loop",
        "ve rollouts beat the linearized baseline",
    ]
    assert all(r.passed for r in results), [r.detail for r in results]
    assert results[1].detail == "9/10 paired seeds (need 9)"


def test_rollout_checks_flag_loose_plans_and_lost_seeds():
    ve = [1e-3] * 10
    ve[3] = 0.05
    results = rollout_checks(paired_frame([0.1] * 10, ve_errors=ve), math.pi)
    # 0.05 exceeds 1e-2 (1 + pi) but still beats the baseline.
    assert [r.passed for r in results] == [True, True, False, True]

    results = rollout_checks(paired_frame([1e-4, 1e-4] + [0.1] * 8), 0.0)
    assert not results[1].passed and not results[3].passed

    sa = [1e-3] * 10
    sa[0] = math.inf
    results = rollout_checks(paired_frame([0.1] * 10, sa_errors=sa), 0.0)
    assert not results[0].passed and results[1].passed


TREND_COSTS = np.array([
    [math.inf, 10.0, 8.0, 7.0],
    [12.0, 11.0, 9.0, 7.5],
    [13.0, 12.0, 8.5, 7.2],
    [math.inf, 13.0, 9.5, 7.1],
])


def test_trend_checks_accept_an_improving_batch():
    results = trend_checks(BatchReport((500, 1000, 3000, 5000), (0, 1, 2, 3), TREND_COSTS))
    assert len(results) == 3
    assert all(r.passed for r in results), [r.detail for r in results]


def test_trend_checks_catch_regressions():
    dropped = TREND_COSTS.copy()
    dropped[0, 3] = math.inf
    results = trend_checks(BatchReport((500, 1000, 3000, 5000), (0, 1, 2, 3), dropped))
    assert not results[0].passed

    spread = TREND_COSTS.copy()
    spread[:, 3] = [5.0, 9.0, 7.0, 8.0]
    results = trend_checks(BatchReport((500, 1000, 3000, 5000), (0, 1, 2, 3), spread))
    assert [r.passed for r in results] == [True, True, False]


def test_homotopy_checks():
    over = pd.DataFrame({"homotopy": ["over", "over", "around"], "arrival_time": [3.0, 3.2, 2.0]})
    around = pd.DataFrame({"homotopy": ["around", "around", "around"], "arrival_time": [2.5, 2.4, 2.6]})
    results = homotopy_checks({"over": over, "around": around})
    assert all(r.passed for r in results), [r.detail for r in results]
    assert results[-1].detail == "around 2.5000 s, over 3.1000 s"

    around = pd.DataFrame({"homotopy": [None, "over", "around"], "arrival_time": [math.nan, 3.0, 2.5]})
    results = homotopy_checks({"over": over, "around": around})
    assert [r.passed for r in results] == [True, False, True]

    slow_detour = pd.DataFrame({"homotopy": ["around"] * 3, "arrival_time": [3.5, 3.6, 3.4]})
    assert not homotopy_checks({"over": over, "around": slow_detour})[-1].passed


def test_suite_registry():
    assert set(SUITES) == {"gradients", "oracle", "hamiltonian", "metric", "rollout", "trend", "homotopy"}


def test_unknown_suite():
    with pytest.raises(ContractError):
        run_suite("everything")


@pytest.mark.slow
def test_gradient_suite_passes():
    passed, results = run_suite("gradients", seed=3, trials=1)
    assert passed, [r.detail for r in results if not r.passed]


@pytest.mark.slow
def test_hamiltonian_spread_is_held_to_the_integrator_bound():
    passed, results = run_suite("hamiltonian", seed=0, trials=1)
    assert passed, [r.detail for r in results if not r.passed]
    # 10 x the default integrator tolerance, tighter than hamiltonian_tol.
    assert all(r.detail.endswith("(bound 1.0e-05)") for r in results)


def test_batch_joins_trials_in_seed_order(tiny, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    report = run_batch(load_scenario(tiny), 2, [8, 4, 4])
    assert report.checkpoints == (4, 8)
    assert report.seeds == (7, 8)
    assert report.costs.shape == (2, 2)
    assert np.all(report.costs[:, 1] <= report.costs[:, 0])
    with pytest.raises(ContractError):
        run_batch(load_scenario(tiny), 0, [4])


def test_cli_usage_errors_exit_with_one(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["plan"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["batch", "--scenario", "x.scn", "--checkpoints", "0,5"])
    assert info.value.code == 1
    assert main(["plan", "--scenario", str(tmp_path / "absent.scn")]) == 1


def test_cli_plan_then_rollout(tiny, tmp_path):
    out = str(tmp_path / "run")
    code = main(["plan", "--scenario", tiny, "--out", out, "--snapshots", "5"])
    assert code in (0, 2)
    for name in ("tree.csv", "summary.txt", "timing.txt", "tree_5.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    header, tree = read_table(os.path.join(out, "tree.csv"))
    assert header["seed"] == "7" and header["solver"] == "linearized"
    assert len(tree) == 10
    assert load_scenario(tiny).digest == header["scenario"]

    if code == 0:
        trajectory = os.path.join(out, "trajectory.csv")
        assert main(["rollout", "--scenario", tiny, "--trajectory", trajectory]) == 0
        assert os.path.exists(os.path.join(out, "rollout.csv"))
