import math

import numpy as np
import pytest

from src.dynamics import (
    CostWeights,
    DiffDrive,
    build_system,
    eval_f,
    hamiltonian,
    hamiltonian_gradients,
    hamiltonian_hessians,
    linearize,
    optimal_control,
    residual_g,
    state_jacobian,
    wrap_angles,
)
from src.utils.errors import ContractError


def numeric_jacobian(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    columns = []
    for k in range(len(x)):
        step = np.zeros_like(x)
        step[k] = h
        columns.append((fun(x + step) - fun(x - step)) / (2.0 * h))
    return np.column_stack(columns)


def test_pendulum_matches_closed_form(pendulum):
    np.testing.assert_allclose(eval_f(pendulum, [0.0, 0.0], [0.0]), [0.0, 0.0])
    np.testing.assert_allclose(eval_f(pendulum, [math.pi / 2, 1.0], [1.0]), [1.0, -19.6 - 0.4 + 4.0])
    np.testing.assert_allclose(pendulum.input_matrix(np.zeros(2)), [[0.0], [4.0]])


def test_diff_drive_matches_closed_form(diff_drive):
    x = np.array([1.0, 2.0, math.pi / 2, 2.0, 0.5])
    np.testing.assert_allclose(eval_f(diff_drive, x, [1.0, 0.5]), [0.0, 2.0, 0.5, 1.5, 0.5], atol=1e-15)


def test_eval_f_rejects_bad_dimensions(pendulum):
    with pytest.raises(ContractError):
        eval_f(pendulum, [0.0, 0.0, 0.0], [0.0])
    with pytest.raises(ContractError):
        eval_f(pendulum, [0.0, 0.0], [0.0, 1.0])


@pytest.mark.parametrize("system", ["pendulum", "diff_drive", "scara"])
def test_state_jacobian_matches_finite_differences(system, rng, request):
    model = request.getfixturevalue(system)
    for _ in range(5):
        x = rng.uniform(-1.0, 1.0, model.n)
        u = rng.uniform(-1.0, 1.0, model.m)
        analytic = state_jacobian(model, x, u)
        numeric = numeric_jacobian(lambda y: model.f(y, u), x)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6)


def test_scara_mass_matrix_is_symmetric_positive_definite(scara, rng):
    for theta2 in rng.uniform(-math.pi, math.pi, 10):
        M = scara.mass_matrix(theta2)
        np.testing.assert_array_equal(M, M.T)
        assert np.min(np.linalg.eigvalsh(M)) > 0.0


def test_scara_coriolis_terms(scara, rng):
    x = rng.uniform(-1.0, 1.0, 6)
    C = scara.coriolis_matrix(x)
    gravity = np.array([0.0, 0.0, scara.params.m3 * scara.params.g])
    np.testing.assert_allclose(C @ x[3:] + gravity, scara._bias(x))
    # M' - 2C is skew-symmetric.
    N = scara.mass_matrix_derivative(x[1]) * x[4] - 2.0 * C
    np.testing.assert_allclose(N, -N.T, atol=1e-12)


def test_scara_forward_kinematics_stretched_arm(scara):
    elbow, tool = scara.forward_kinematics(np.array([0.0, 0.0, 3.0, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(elbow, [1.0, 0.0])
    np.testing.assert_allclose(tool, [2.0, 0.0])
    bodies = scara.workspace_bodies([math.pi / 2, 0.0, 3.0, 0.0, 0.0, 0.0])
    assert len(bodies) == 3
    assert bodies[2].z_low == 3.0 and bodies[2].z_high == 5.0


def test_linearization_is_exact_at_anchor(pendulum, diff_drive, rng):
    for model in (pendulum, diff_drive):
        x_hat = rng.uniform(-1.0, 1.0, model.n)
        affine = linearize(model, x_hat)
        np.testing.assert_allclose(affine.A @ x_hat + affine.c, model.f(x_hat, np.zeros(model.m)), atol=1e-12)
        np.testing.assert_allclose(residual_g(model, x_hat, np.zeros(model.m), affine), affine.c, atol=1e-12)


def test_pendulum_residual_away_from_origin(pendulum):
    affine = linearize(pendulum, np.zeros(2))
    np.testing.assert_allclose(affine.c, [0.0, 0.0])
    g = residual_g(pendulum, np.array([math.pi, 0.0]), np.zeros(1), affine)
    np.testing.assert_allclose(g, [0.0, 19.6 * math.pi], rtol=1e-12)


def test_residual_closes_the_dynamics(diff_drive, rng):
    affine = linearize(diff_drive, rng.uniform(-1.0, 1.0, 5))
    x = rng.uniform(-1.0, 1.0, 5)
    u = rng.uniform(-1.0, 1.0, 2)
    rebuilt = affine.A @ x + affine.B @ u + residual_g(diff_drive, x, u, affine)
    np.testing.assert_allclose(rebuilt, diff_drive.f(x, u), atol=1e-12)


def test_optimal_control_diff_drive(diff_drive):
    u = optimal_control(diff_drive, np.zeros(5), np.array([0.0, 0.0, 0.0, 1.0, 1.0]), CostWeights(20.0 * np.eye(2)))
    np.testing.assert_allclose(u, [-0.1, 0.0])


def test_hamiltonian_double_integrator(double_integrator, unit_weights):
    assert hamiltonian(double_integrator, np.array([0.0, 1.0]), np.array([1.0, 0.0]), unit_weights) == 2.0


def test_hamiltonian_gradients_match_finite_differences(scara, rng):
    weights = CostWeights([1.0, 1.0, 0.5])
    x = rng.uniform(-1.0, 1.0, 6)
    lam = rng.uniform(-1.0, 1.0, 6)
    H_x, H_lam = hamiltonian_gradients(scara, x, lam, weights)
    num_x = numeric_jacobian(lambda y: np.array([hamiltonian(scara, y, lam, weights)]), x)[0]
    num_lam = numeric_jacobian(lambda l: np.array([hamiltonian(scara, x, l, weights)]), lam)[0]
    np.testing.assert_allclose(H_x, num_x, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(H_lam, num_lam, rtol=1e-5, atol=1e-6)


def test_hamiltonian_hessians_are_consistent(diff_drive, rng):
    weights = CostWeights(np.eye(2))
    x = rng.uniform(-1.0, 1.0, 5)
    lam = rng.uniform(-1.0, 1.0, 5)
    dHlam_dx, dHlam_dlam, dHx_dx, dHx_dlam = hamiltonian_hessians(diff_drive, x, lam, weights)
    np.testing.assert_allclose(dHx_dlam, dHlam_dx.T)
    np.testing.assert_allclose(dHx_dx, dHx_dx.T)
    np.testing.assert_allclose(dHlam_dlam, -diff_drive.input_matrix(x) @ diff_drive.input_matrix(x).T)


def test_lateral_velocity_vanishes_on_feasible_motion(diff_drive):
    x = np.array([0.0, 0.0, 0.3, 1.5, 0.2])
    x_dot = diff_drive.f(x, np.zeros(2))
    assert abs(DiffDrive.lateral_velocity(x, x_dot)) < 1e-15


def test_wrap_angles():
    wrapped = wrap_angles([2 * math.pi + 0.5, -math.pi, 7.0], (0, 1))
    np.testing.assert_allclose(wrapped, [0.5, math.pi, 7.0])


@pytest.mark.parametrize("R", [[[1.0, 2.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]], [[1.0, 0.0, 0.0]]])
def test_cost_weights_reject_bad_matrices(R):
    with pytest.raises(ContractError):
        CostWeights(np.array(R))


def test_running_cost():
    weights = CostWeights([2.0, 4.0])
    np.testing.assert_allclose(weights.running_cost([[0.0, 0.0], [1.0, 1.0]]), [1.0, 4.0])


def test_build_system_registry():
    assert build_system("pendulum", {"b": 0.0}).params.b == 0.0
    linear = build_system("linear", {"A": [[0.0]], "B": [[2.0]]})
    assert (linear.n, linear.m) == (1, 1)
    with pytest.raises(ContractError):
        build_system("unicycle")
    with pytest.raises(ContractError):
        build_system("pendulum", {"mass": 2.0})
    with pytest.raises(ContractError):
        build_system("diff_drive", {"b": 1.0})
    with pytest.raises(ContractError):
        build_system("linear", {"A": [[0.0]]})
