"""
Variation of extremals: Newton shooting on (lambda(0), tau).

The state/costate system x' = H_lambda, lambda' = -H_x is integrated forward
from (x0, lambda(0)) together with the influence matrices
P_x = dx/dlambda(0) and P_lambda = dlambda/dlambda(0). The residual
(x(tau) - x1, H(tau)) is driven to zero by a damped Newton step whose
matrix is

    [ P_x(tau)                               x'(tau) ]
    [ -lambda'(tau)^T P_x + x'(tau)^T P_lambda   0   ]

A step is accepted only when it lowers |residual|, and one step moves tau by
at most max_tau_change * tau. Each full integration covers 2n(n+1) first-order ODEs; each line-search
trial integrates the 2n state/costate equations only.
"""

import math

import numpy as np

from src.affine_ocp import TrajectorySegment, trajectory_cost
from src.dynamics import hamiltonian, hamiltonian_gradients, hamiltonian_hessians, optimal_control
from src.numeric import IntegrationStats, integrate, solve_linear
from src.tpbvp.common import (
    DivergenceMonitor,
    InfluenceMatrices,
    SolverConfig,
    TpbvpSolution,
    boundary_residual,
    hamiltonian_profile,
    initial_guess,
    iterate_change,
    normalized_resample,
    solve_staged,
)
from src.utils.errors import IntegrationDiverged, SingularMatrixError
from src.utils.logger import get_logger

logger = get_logger(__name__)

# Armijo fraction of the predicted residual decrease a line-search trial must achieve.
SUFFICIENT_DECREASE = 1e-4


def influence_rhs(model, x, lam, P_x, P_lam, weights):
    """
    Time derivative of the influence matrices.

    Returns:
        (P_x', P_lambda') = (dHlam/dx P_x + dHlam/dlam P_lam, -dHx/dx P_x - dHx/dlam P_lam)
    """
    dHlam_dx, dHlam_dlam, dHx_dx, dHx_dlam = hamiltonian_hessians(model, x, lam, weights)
    return dHlam_dx @ P_x + dHlam_dlam @ P_lam, -dHx_dx @ P_x - dHx_dlam @ P_lam


def shoot(model, weights, x0, lam0, tau, cfg, stats=None, with_influence=True):
    """
    Integrate the extremal from (x0, lambda(0)) over [0, tau].

    Returns:
        (segment, InfluenceMatrices or None)
    """
    n = model.n

    def rhs(t, y):
        x, lam = y[:n], y[n:2 * n]
        H_x, H_lam = hamiltonian_gradients(model, x, lam, weights)
        if not with_influence:
            return np.concatenate([H_lam, -H_x])
        P_x = y[2 * n:2 * n + n * n].reshape(n, n)
        P_lam = y[2 * n + n * n:].reshape(n, n)
        dP_x, dP_lam = influence_rhs(model, x, lam, P_x, P_lam, weights)
        return np.concatenate([H_lam, -H_x, dP_x.ravel(), dP_lam.ravel()])

    y0 = [np.asarray(x0, dtype=float), np.asarray(lam0, dtype=float)]
    if with_influence:
        y0 += [np.zeros(n * n), np.eye(n).ravel()]
    label = "ve_shooting" if with_influence else "ve_line_search"
    sol = integrate(rhs, np.concatenate(y0), 0.0, tau, cfg.integrator.uniform(tau), stats=stats, label=label)

    states = sol.values[:, :n]
    costates = sol.values[:, n:2 * n]
    controls = np.array([optimal_control(model, x, lam, weights) for x, lam in zip(states, costates)])
    segment = TrajectorySegment(
        times=sol.times,
        states=states,
        controls=controls,
        costates=costates,
        duration=float(tau),
        cost=trajectory_cost(sol.times, controls, weights),
    )
    influence = None
    if with_influence:
        influence = InfluenceMatrices(
            times=sol.times,
            P_x=sol.values[:, 2 * n:2 * n + n * n].reshape(-1, n, n),
            P_lam=sol.values[:, 2 * n + n * n:].reshape(-1, n, n),
        )
    return segment, influence


def _shooting_residual(model, weights, segment, x1, free_final_time):
    r = segment.states[-1] - x1
    if not free_final_time:
        return r
    return np.append(r, hamiltonian(model, segment.states[-1], segment.costates[-1], weights))


def _newton_step(model, weights, segment, influence, residual, free_final_time, tikhonov):
    n = model.n
    P_x, P_lam = influence.final
    if free_final_time:
        H_x, H_lam = hamiltonian_gradients(model, segment.states[-1], segment.costates[-1], weights)
        x_dot, lam_dot = H_lam, -H_x
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = P_x
        M[:n, n] = x_dot
        M[n, :n] = -lam_dot @ P_x + x_dot @ P_lam
    else:
        M = P_x
    try:
        return solve_linear(M, -residual)
    except SingularMatrixError:
        logger.debug(3, "VE Newton matrix singular, retrying with a Tikhonov shift")
        return solve_linear(M + tikhonov * np.eye(M.shape[0]), -residual)


class VariationOfExtremals:
    """Damped Newton iterations on (lambda(0), tau) for one target."""
    def __init__(self, model, weights, x0, cfg, free_final_time=True):
        self.model = model
        self.weights = weights
        self.x0 = x0
        self.cfg = cfg
        self.free_final_time = free_final_time

    def _line_search(self, x1, lam0, tau, delta, base, stats):
        """
        Backtrack along the Newton direction until |residual| decreases.

        The first trial is capped so tau moves by at most cfg.max_tau_change * tau.

        Returns:
            (lambda(0), tau) of the accepted trial, or None when every trial failed
        """
        cfg = self.cfg
        n = self.model.n
        alpha = cfg.newton_damping
        if self.free_final_time and delta[n] != 0.0:
            alpha = min(alpha, cfg.max_tau_change * tau / abs(delta[n]))
        for _ in range(cfg.max_halvings + 1):
            lam_trial = lam0 + alpha * delta[:n]
            tau_trial = cfg.clamp_tau(tau + alpha * delta[n]) if self.free_final_time else tau
            try:
                trial, _ = shoot(self.model, self.weights, self.x0, lam_trial, tau_trial, cfg, stats,
                                 with_influence=False)
                trial_norm = float(np.linalg.norm(
                    _shooting_residual(self.model, self.weights, trial, x1, self.free_final_time)))
            except IntegrationDiverged:
                trial_norm = math.inf
            if trial_norm <= (1.0 - SUFFICIENT_DECREASE * alpha) * base:
                return lam_trial, tau_trial
            alpha *= 0.5
        return None

    def __call__(self, x1, guess, result):
        """Solve for target x1 from guess=(segment, affine), recording into `result`."""
        model, weights, cfg = self.model, self.weights, self.cfg
        n = model.n
        prev = guess[0]
        lam0 = prev.costates[0].copy()
        tau = prev.duration
        monitor = DivergenceMonitor()

        for k in range(1, cfg.max_iters + 1):
            stats = IntegrationStats()
            try:
                segment, influence = shoot(model, weights, self.x0, lam0, tau, cfg, stats)
            except IntegrationDiverged as e:
                result.iterations += 1
                result.ode_counts.append(stats.total)
                result.reason = f"failed: {e}"
                logger.debug(3, f"VE iteration {k} failed: {e}")
                return

            residual = boundary_residual(segment.states, self.x0, x1)
            h_max = float(np.max(np.abs(hamiltonian_profile(model, segment.states, segment.costates, weights))))
            p_states, _, p_costates = normalized_resample(prev, segment.times - segment.times[0], tau)
            change = iterate_change(segment.states, segment.costates, p_states, p_costates)
            result.record(residual, h_max, change, stats.total)
            result.segment = segment

            if monitor.diverged(residual if math.isfinite(h_max) else math.inf):
                result.reason = "diverged"
                logger.debug(3, f"VE diverged after {k} iterations (residual {residual:.3e})")
                return
            within_tol = residual <= cfg.boundary_tol and (h_max <= cfg.hamiltonian_tol or not self.free_final_time)
            if within_tol and change < cfg.boundary_tol:
                result.converged = True
                result.reason = "converged"
                return

            shooting_residual = _shooting_residual(model, weights, segment, x1, self.free_final_time)
            try:
                delta = _newton_step(model, weights, segment, influence, shooting_residual,
                                     self.free_final_time, cfg.tikhonov)
            except SingularMatrixError:
                result.reason = "singular Newton matrix"
                return

            accepted = self._line_search(x1, lam0, tau, delta, float(np.linalg.norm(shooting_residual)), stats)
            result.ode_counts[-1] = stats.total
            if accepted is None:
                if not within_tol:
                    result.reason = "line search found no decrease"
                    logger.debug(3, f"VE line search failed at iteration {k} (residual {residual:.3e})")
                    return
                # At the integration noise floor the full step only has to settle the iterate.
                accepted = (lam0 + cfg.newton_damping * delta[:n],
                            cfg.clamp_tau(tau + cfg.newton_damping * delta[n]) if self.free_final_time else tau)
            lam0, tau = accepted
            prev = segment

        result.reason = "max_iters"


def solve_ve(model, weights, x0, x1, cfg=None, guess=None, free_final_time=True):
    """
    Variation-of-extremals TPBVP solver.

    Args:
        model: SystemModel
        weights: CostWeights
        x0: Initial state
        x1: Final state
        cfg: SolverConfig
        guess: Optional (segment, affine) initial guess; lambda(0) and tau are taken from it
        free_final_time: When False, tau stays at the guess value, only lambda(0) is
            updated and no continuation is attempted

    Returns:
        TpbvpSolution
    """
    cfg = cfg or SolverConfig()
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    guess = guess if guess is not None else initial_guess(model, x0, x1, weights, cfg)
    stage = VariationOfExtremals(model, weights, x0, cfg, free_final_time)
    if not free_final_time:
        result = TpbvpSolution(segment=guess[0], method="ve", converged=False)
        stage(x1, guess, result)
        return result
    return solve_staged(stage, model, weights, x0, x1, cfg, guess, "ve")
