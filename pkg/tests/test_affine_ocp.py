import math

import numpy as np
import pytest

from src.affine_ocp import (
    BACKWARD,
    TrajectorySegment,
    concatenate_segments,
    cost_at,
    optimal_final_time,
    propagate_gramian,
    solve_affine,
    trajectory_cost,
)
from src.dynamics import CostWeights, LinearSystem, linearize
from src.utils.errors import ContractError, UnreachableStateError


@pytest.fixture
def di_affine(double_integrator, unit_weights):
    return linearize(double_integrator, np.zeros(2), weights=unit_weights)


def test_double_integrator_gramian_closed_form(di_affine, fine):
    table = propagate_gramian(di_affine, np.zeros(2), 1.0, cfg=fine)
    np.testing.assert_allclose(table.G[-1], [[1.0 / 3.0, 0.5], [0.5, 1.0]], atol=1e-10)
    np.testing.assert_array_equal(table.G[0], np.zeros((2, 2)))
    for G in table.G[1:]:
        np.testing.assert_allclose(G, G.T)
        assert np.min(np.linalg.eigvalsh(G)) >= -1e-14


def test_double_integrator_cost_at_one(di_affine, fine):
    table = propagate_gramian(di_affine, np.zeros(2), 1.0, cfg=fine)
    assert cost_at(table, [1.0, 0.0], 1.0) == pytest.approx(7.0, rel=1e-9)


def test_cost_at_zero_time(di_affine, fine):
    table = propagate_gramian(di_affine, np.zeros(2), 1.0, cfg=fine)
    assert cost_at(table, [0.0, 0.0], 0.0) == 0.0
    assert cost_at(table, [1.0, 0.0], 0.0) == math.inf


def test_cost_at_rejects_off_grid_time(di_affine):
    table = propagate_gramian(di_affine, np.zeros(2), 1.0, cfg=None)
    with pytest.raises(ContractError):
        cost_at(table, [1.0, 0.0], 0.12345)


def test_gramian_needs_positive_horizon(di_affine):
    with pytest.raises(ContractError):
        propagate_gramian(di_affine, np.zeros(2), 0.0)


def test_scalar_integrator_optimum(scalar_integrator, unit_weights, coarse):
    affine = linearize(scalar_integrator, np.zeros(1), weights=unit_weights)
    result = optimal_final_time(affine, [0.0], [1.0], cfg=coarse)
    assert result.valid
    assert result.cost == pytest.approx(math.sqrt(2.0), abs=1e-4)
    assert result.tau_star == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-3)
    assert result.grid_cost >= result.cost
    assert result.cost >= result.tau_star


def test_forward_and_backward_scans_agree(di_affine, coarse):
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    forward = optimal_final_time(di_affine, x0, x1, cfg=coarse)
    backward = optimal_final_time(di_affine, x0, x1, cfg=coarse, direction=BACKWARD)
    assert backward.grid_cost == pytest.approx(forward.grid_cost, rel=1e-8)
    assert backward.grid_tau == pytest.approx(forward.grid_tau)


def test_unreachable_target(unit_weights, coarse):
    model = LinearSystem(np.zeros((2, 2)), [[1.0], [0.0]])
    affine = linearize(model, np.zeros(2), weights=unit_weights)
    result = optimal_final_time(affine, np.zeros(2), [0.0, 1.0], tau_max=1.0, cfg=coarse)
    assert not result.reachable and not result.valid
    with pytest.raises(UnreachableStateError):
        solve_affine(affine, np.zeros(2), [0.0, 1.0], coarse, tau_max=1.0)


def test_tau_max_must_be_positive(di_affine):
    with pytest.raises(ContractError):
        optimal_final_time(di_affine, np.zeros(2), np.ones(2), tau_max=0.0)


def test_solve_affine_meets_boundary_conditions(di_affine, fine):
    x0, x1 = np.zeros(2), np.array([1.0, 0.0])
    distance = optimal_final_time(di_affine, x0, x1, cfg=fine)
    segment = solve_affine(di_affine, x0, x1, fine)
    assert segment.endpoint_residual(x0, x1) < 1e-6
    assert segment.duration == pytest.approx(distance.tau_star)
    assert segment.cost == pytest.approx(distance.cost, rel=1e-4)
    assert np.all(np.diff(segment.times) > 0)
    assert segment.states.shape == (len(segment.times), 2)
    assert segment.controls.shape == (len(segment.times), 1)


def test_solve_affine_with_fixed_time(di_affine, fine):
    segment = solve_affine(di_affine, np.zeros(2), [1.0, 0.0], fine, tau=1.0)
    assert segment.cost == pytest.approx(7.0, rel=1e-6)
    # Rest-to-rest minimum energy control is u(t) = 6 - 12 t.
    np.testing.assert_allclose(segment.controls[:, 0], 6.0 - 12.0 * segment.times, atol=1e-6)


def test_affine_drift_is_carried(unit_weights, coarse):
    model = LinearSystem([[0.0]], [[1.0]], c=[1.0])
    affine = linearize(model, np.zeros(1), weights=unit_weights)
    # C(tau) = 1.5 tau + 1/(2 tau) - 1 once the unit drift is accounted for.
    result = optimal_final_time(affine, [0.0], [1.0], cfg=coarse)
    assert result.cost == pytest.approx(math.sqrt(3.0) - 1.0, abs=1e-4)
    assert result.tau_star == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-3)
    np.testing.assert_allclose(affine.c, [1.0])


def test_trajectory_cost_of_zero_control():
    times = np.linspace(0.0, 2.0, 21)
    assert trajectory_cost(times, np.zeros((21, 1)), CostWeights(1.0)) == pytest.approx(2.0)
    assert trajectory_cost(times[:2], np.zeros((2, 1)), CostWeights(1.0)) == pytest.approx(0.1)
    assert trajectory_cost(times[:1], np.zeros((1, 1)), CostWeights(1.0)) == 0.0


def test_concatenate_segments():
    first = TrajectorySegment(np.array([0.0, 0.5, 1.0]), np.array([[0.0], [0.5], [1.0]]), np.zeros((3, 1)),
                              duration=1.0, cost=1.0)
    second = TrajectorySegment(np.array([0.0, 1.0]), np.array([[1.0], [2.0]]), np.ones((2, 1)),
                               duration=1.0, cost=1.5)
    joined = concatenate_segments([first, second])
    np.testing.assert_allclose(joined.times, [0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(joined.states[:, 0], [0.0, 0.5, 1.0, 2.0])
    assert joined.duration == 2.0
    assert joined.cost == 2.5
    assert joined.costates is None
    assert concatenate_segments([]) is None
