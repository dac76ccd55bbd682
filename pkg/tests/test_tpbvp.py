import math

import numpy as np
import pytest

from src.affine_ocp import solve_affine
from src.dynamics import CostWeights, linearize
from src.experiments.verify import influence_error
from src.tpbvp import (
    SOLVERS,
    SolverConfig,
    boundary_residual,
    final_time_gradient,
    hamiltonian_profile,
    initial_guess,
    shoot,
    solve_sa,
    solve_tpbvp,
    solve_ve,
)
from src.tpbvp.common import DivergenceMonitor, guess_residual
from src.tpbvp.successive_approximation import AndersonMixer, next_arrival_time
from src.tpbvp.variation_of_extremals import VariationOfExtremals, _newton_step, _shooting_residual
from src.utils.errors import ContractError


@pytest.mark.parametrize("kwargs", [
    {"max_iters": 0},
    {"boundary_tol": 0.0},
    {"step_size": -1.0},
    {"newton_damping": 1.5},
    {"tau_min": 2.0, "tau_max": 1.0},
    {"max_sweeps": 1},
    {"anderson_depth": -1},
    {"max_tau_change": 0.0},
    {"continuation_step": 0.01},
    {"continuation_step": 1.5},
])
def test_solver_config_validation(kwargs):
    with pytest.raises(ContractError):
        SolverConfig(**kwargs)


def test_tau_min_defaults_to_integrator_step(solver_cfg):
    assert solver_cfg.tau_min == solver_cfg.integrator.dt
    assert solver_cfg.clamp_tau(0.0) == solver_cfg.integrator.dt
    assert solver_cfg.clamp_tau(1e9) == solver_cfg.tau_max


def test_divergence_needs_three_consecutive_increases():
    monitor = DivergenceMonitor()
    assert not any(monitor.diverged(r) for r in [1.0, 2.0, 3.0])
    assert monitor.diverged(4.0)

    monitor = DivergenceMonitor()
    assert not any(monitor.diverged(r) for r in [1.0, 2.0, 1.5, 3.0, 4.0])
    assert DivergenceMonitor().diverged(math.nan)


def test_boundary_residual_is_scaled():
    states = np.array([[0.0, 0.0], [9.0, 0.0]])
    assert boundary_residual(states, np.zeros(2), np.array([10.0, 0.0])) == pytest.approx(1.0 / 11.0)
    assert boundary_residual(states, np.array([0.5, 0.0]), np.array([9.0, 0.0])) == pytest.approx(0.5 / 1.5)


def test_final_time_gradient_without_costate(pendulum, unit_weights):
    affine = linearize(pendulum, np.zeros(2), weights=unit_weights)
    zero = np.zeros(2)
    assert final_time_gradient(pendulum, [1.0, 0.5], zero, zero, affine, unit_weights) == 1.0


def test_final_time_gradient_is_hamiltonian_at_optimum(double_integrator, unit_weights, fine):
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    affine = linearize(double_integrator, x0, weights=unit_weights)
    segment = solve_affine(affine, x0, x1, fine)
    lam = segment.costates[-1]
    gradient = final_time_gradient(double_integrator, x1, lam, lam, affine, unit_weights)
    H = hamiltonian_profile(double_integrator, segment.states, segment.costates, unit_weights)
    assert gradient == pytest.approx(H[-1], abs=1e-9)
    assert abs(gradient) < 1e-3
    # H is conserved along an autonomous extremal.
    assert np.ptp(H) < 1e-6


def test_influence_matrices_match_finite_differences(pendulum, unit_weights, solver_cfg, rng):
    for _ in range(2):
        x0 = rng.uniform(-1.0, 1.0, 2)
        lam0 = rng.uniform(-1.0, 1.0, 2)
        assert influence_error(pendulum, unit_weights, x0, lam0, 1.0, solver_cfg) <= 1e-3


def test_shoot_returns_extremal_samples(diff_drive, solver_cfg):
    weights = CostWeights(np.eye(2))
    x0 = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    segment, influence = shoot(diff_drive, weights, x0, np.zeros(5), 0.5, solver_cfg)
    # With a zero costate the control vanishes and the robot coasts straight ahead.
    np.testing.assert_allclose(segment.controls, 0.0)
    np.testing.assert_allclose(segment.end, [0.5, 0.0, 0.0, 1.0, 0.0], atol=1e-12)
    assert segment.cost == pytest.approx(0.5)
    P_x, P_lam = influence.final
    assert P_x.shape == P_lam.shape == (5, 5)
    np.testing.assert_allclose(influence.P_lam[0], np.eye(5))


@pytest.mark.parametrize("solver", [solve_sa, solve_ve])
def test_solvers_reproduce_the_affine_optimum(solver, double_integrator, unit_weights, coarse):
    cfg = SolverConfig(integrator=coarse, boundary_tol=1e-6)
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    reference = solve_affine(linearize(double_integrator, x0, weights=unit_weights), x0, x1, coarse)
    solution = solver(double_integrator, unit_weights, x0, x1, cfg)
    assert solution.converged, solution.reason
    assert solution.cost == pytest.approx(reference.cost, rel=1e-5)
    assert solution.iterations <= 3
    assert len(solution.residual_history) == solution.iterations
    assert solution.total_odes > 0


@pytest.mark.parametrize("method", ["sa", "ve"])
def test_solvers_converge_on_a_short_pendulum_move(method, pendulum, unit_weights, solver_cfg):
    x0, x1 = np.zeros(2), np.array([0.05, 0.0])
    solution = solve_tpbvp(method, pendulum, unit_weights, x0, x1, solver_cfg)
    assert solution.converged, solution.reason
    assert boundary_residual(solution.segment.states, x0, x1) <= solver_cfg.boundary_tol
    assert solution.hamiltonian_history[-1] <= solver_cfg.hamiltonian_tol
    assert solution.tau > 0.0


def test_ve_with_fixed_final_time_keeps_tau(pendulum, unit_weights, solver_cfg):
    x0, x1 = np.zeros(2), np.array([0.2, 0.0])
    guess = initial_guess(pendulum, x0, x1, unit_weights, solver_cfg)
    solution = solve_ve(pendulum, unit_weights, x0, x1, solver_cfg, guess=guess, free_final_time=False)
    assert solution.converged, solution.reason
    assert solution.tau == pytest.approx(guess[0].duration)


def test_linearized_solver_returns_the_guess(pendulum, unit_weights, solver_cfg):
    x0, x1 = np.zeros(2), np.array([0.2, 0.0])
    solution = solve_tpbvp("linearized", pendulum, unit_weights, x0, x1, solver_cfg)
    assert solution.converged and solution.iterations == 0
    assert solution.method == "linearized"


def test_unknown_solver():
    assert set(SOLVERS) == {"sa", "ve", "linearized"}
    with pytest.raises(ContractError):
        solve_tpbvp("shooting", None, None, None, None)


def test_tau_steps_are_clipped_and_clamped(solver_cfg):
    assert solver_cfg.limit_tau_step(2.0, 5.0) == 1.0
    assert solver_cfg.limit_tau_step(2.0, -5.0) == -1.0
    assert solver_cfg.limit_tau_step(2.0, 0.3) == 0.3

    history = []
    assert next_arrival_time(1.0, 2.0, history, solver_cfg) == pytest.approx(0.8)
    # Secant through (1, 2) and (0.8, 1): slope 5, root at 0.6.
    assert next_arrival_time(0.8, 1.0, history, solver_cfg) == pytest.approx(0.6)
    assert history == [(1.0, 2.0), (0.8, 1.0)]

    assert next_arrival_time(0.8, 3.0, [(1.0, 2.0)], solver_cfg) == pytest.approx(0.5)
    assert next_arrival_time(1.0, -100.0, [], solver_cfg) == pytest.approx(1.5)
    capped = SolverConfig(integrator=solver_cfg.integrator, tau_max=1.2)
    assert next_arrival_time(1.0, -100.0, [], capped) == 1.2


def test_anderson_mixing_tames_an_expanding_map():
    mixer = AndersonMixer(1)
    y = np.array([0.0])
    for _ in range(3):
        y = mixer.next(y, -2.0 * y + 3.0)
    np.testing.assert_allclose(y, [1.0])

    M = np.array([[0.5, 2.0], [0.0, -1.5]])
    b = np.ones(2)
    mixer = AndersonMixer(2)
    y = np.zeros(2)
    for _ in range(3):
        y = mixer.next(y, M @ y + b)
    np.testing.assert_allclose(y, [3.6, 0.4], atol=1e-8)

    plain = AndersonMixer(0)
    np.testing.assert_array_equal(plain.next(np.zeros(2), b), b)
    np.testing.assert_array_equal(plain.next(b, M @ b + b), M @ b + b)


def test_guess_replay_separates_near_and_far_targets(pendulum, unit_weights, solver_cfg):
    x0 = np.zeros(2)
    near = np.array([0.1, 0.0])
    segment, _ = initial_guess(pendulum, x0, near, unit_weights, solver_cfg)
    assert guess_residual(pendulum, x0, near, segment, solver_cfg) <= solver_cfg.continuation_threshold
    far = np.array([math.pi, 0.0])
    segment, _ = initial_guess(pendulum, x0, far, unit_weights, solver_cfg)
    assert guess_residual(pendulum, x0, far, segment, solver_cfg) > solver_cfg.continuation_threshold


def test_sa_second_pass_is_exact_on_a_linear_system(double_integrator, unit_weights, coarse):
    solution = solve_sa(double_integrator, unit_weights, np.zeros(2), np.array([1.0, 0.0]),
                        SolverConfig(integrator=coarse))
    assert solution.converged, solution.reason
    assert solution.stages == 1
    assert solution.change_history[1] < 1e-10


def test_sa_integrates_four_n_equations_per_pass(pendulum, unit_weights, solver_cfg):
    n = pendulum.n
    solution = solve_sa(pendulum, unit_weights, np.zeros(2), np.array([0.05, 0.0]), solver_cfg)
    assert solution.converged and solution.stages == 1, solution.reason
    # The Gramian's n(n+1)/2 entries are integrated once, with the first pass.
    assert solution.ode_counts[0] == 4 * n + n * (n + 1) // 2
    assert all(count == 4 * n for count in solution.ode_counts[1:])
    assert solution.setup_odes == n
    assert solution.total_odes == sum(solution.ode_counts) + n


def test_ve_counts_influence_and_line_search_equations(pendulum, unit_weights, solver_cfg):
    n = pendulum.n
    solution = solve_ve(pendulum, unit_weights, np.zeros(2), np.array([0.05, 0.0]), solver_cfg)
    assert solution.converged and solution.stages == 1, solution.reason
    full = 2 * n * (n + 1)
    assert solution.ode_counts[-1] == full
    for count in solution.ode_counts[:-1]:
        assert count >= full + 2 * n
        assert (count - full) % (2 * n) == 0


def test_ve_line_search_refuses_uphill_steps(pendulum, unit_weights, solver_cfg):
    x0, x1 = np.zeros(2), np.array([0.3, 0.0])
    guess, _ = initial_guess(pendulum, x0, x1, unit_weights, solver_cfg)
    lam0, tau = guess.costates[0], guess.duration
    segment, influence = shoot(pendulum, unit_weights, x0, lam0, tau, solver_cfg)
    residual = _shooting_residual(pendulum, unit_weights, segment, x1, True)
    delta = _newton_step(pendulum, unit_weights, segment, influence, residual, True, solver_cfg.tikhonov)
    stage = VariationOfExtremals(pendulum, unit_weights, x0, solver_cfg)
    base = float(np.linalg.norm(residual))

    assert stage._line_search(x1, lam0, tau, -delta, base, None) is None
    lam_new, tau_new = stage._line_search(x1, lam0, tau, delta, base, None)
    trial, _ = shoot(pendulum, unit_weights, x0, lam_new, tau_new, solver_cfg, with_influence=False)
    assert np.linalg.norm(_shooting_residual(pendulum, unit_weights, trial, x1, True)) < base
    assert abs(tau_new - tau) <= solver_cfg.max_tau_change * tau + 1e-12


@pytest.mark.parametrize("target", [0.5, 1.0, 2.0])
def test_sa_converges_on_large_pendulum_moves(target, pendulum, unit_weights, solver_cfg):
    x0, x1 = np.zeros(2), np.array([target, 0.0])
    solution = solve_sa(pendulum, unit_weights, x0, x1, solver_cfg)
    assert solution.converged, solution.reason
    assert boundary_residual(solution.segment.states, x0, x1) <= solver_cfg.boundary_tol
    assert solution.hamiltonian_history[-1] <= solver_cfg.hamiltonian_tol


@pytest.mark.slow
@pytest.mark.parametrize("target, cost", [(0.5, 1.08512), (1.0, 2.34594), (2.0, 4.55835), (math.pi, None)])
def test_sa_and_ve_agree_on_pendulum_swings(target, cost, pendulum, unit_weights, solver_cfg):
    x0, x1 = np.zeros(2), np.array([target, 0.0])
    sa = solve_sa(pendulum, unit_weights, x0, x1, solver_cfg)
    ve = solve_ve(pendulum, unit_weights, x0, x1, solver_cfg)
    for solution in (sa, ve):
        assert solution.converged, f"{solution.method}: {solution.reason}"
        assert boundary_residual(solution.segment.states, x0, x1) <= solver_cfg.boundary_tol
        assert solution.hamiltonian_history[-1] <= solver_cfg.hamiltonian_tol
    assert sa.cost == pytest.approx(ve.cost, rel=1e-3)
    assert sa.tau == pytest.approx(ve.tau, rel=1e-3)
    if cost is not None:
        assert ve.cost == pytest.approx(cost, rel=1e-2)
