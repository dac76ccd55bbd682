"""
Successive approximation for the free-final-time TPBVP.

The nonlinear dynamics are split as f = A x + B u + g(x, u) around the affine
model of the initial guess. Each pass freezes the nonlinear remainder g (and
its derivatives) on the current iterate, which turns the necessary
conditions into a linear TPBVP solved with the same Gramian as the affine
problem:

    lambda_p' = -A^T lambda_p - g_x^T lambda_prev,            lambda_p(tau) = 0
    x_h'      = A x_h - S lambda_p + w(t),                    x_h(0) = x0
    lambda(tau) = -G(tau)^-1 (x1 - x_h(tau))

followed by a backward pass of the coupled state/costate system from
(x1, lambda(tau)). Far from the linearization point the plain pass map
expands errors, so the iterate fed to the next pass is an Anderson mix of
the recent pass outputs. The arrival time only moves once the passes have
settled at the current tau, using dJ/dtau = H(tau).

Per pass 4n first-order ODEs are integrated; G is integrated once.
"""

import math
from collections import deque

import numpy as np

from src.affine_ocp import FORWARD, GramianIntegrator, TrajectorySegment, trajectory_cost
from src.dynamics import g_u, g_x, optimal_control, residual_g
from src.numeric import CubicInterpolant, GramianFactor, IntegrationStats, integrate
from src.tpbvp.common import (
    DivergenceMonitor,
    SolverConfig,
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

# Singular values below this fraction of the largest are dropped from the mixing fit.
MIXING_CUTOFF = 1e-10


def final_time_gradient(model, x_tau, lam, lam_prev, affine, weights, u_prev=None):
    """
    dJ/dtau of the current iterate at its endpoint.

        1 - 1/2 lam^T B R^-1 B^T lam + 1/2 lam_prev^T g_u R^-1 g_u^T lam_prev + lam^T (A x1 + g)

    Args:
        model: SystemModel
        x_tau: Endpoint state (the target x1)
        lam: Costate of the current iterate at tau
        lam_prev: Costate of the previous iterate at tau
        affine: AffineModel the dynamics are split around
        weights: CostWeights
        u_prev: Control at tau used to evaluate g (zero when omitted)

    Returns:
        Scalar gradient; equals the iterate's Hamiltonian at tau
    """
    x_tau = np.asarray(x_tau, dtype=float)
    u = np.zeros(model.m) if u_prev is None else np.asarray(u_prev, dtype=float)
    gu = g_u(model, x_tau, u, affine)
    g = residual_g(model, x_tau, u, affine)
    Bt_lam = affine.B.T @ lam
    gut_lp = gu.T @ lam_prev
    return float(1.0
                 - 0.5 * Bt_lam @ weights.R_inv @ Bt_lam
                 + 0.5 * gut_lp @ weights.R_inv @ gut_lp
                 + lam @ (affine.A @ x_tau + g))


def next_arrival_time(tau, gradient, history, cfg):
    """
    Arrival time after the passes settled at `tau`.

    The first update is a gradient step of cfg.step_size. Later updates take the
    secant through the previous (tau, dJ/dtau) pair while its slope is positive,
    and fall back to the gradient step otherwise.

    Args:
        tau: Current arrival time
        gradient: dJ/dtau of the settled iterate
        history: List of earlier (tau, gradient) pairs; appended to
        cfg: SolverConfig

    Returns:
        New tau inside [tau_min, tau_max]
    """
    step = -cfg.step_size * gradient
    if history:
        tau_old, gradient_old = history[-1]
        if tau != tau_old:
            slope = (gradient - gradient_old) / (tau - tau_old)
            if slope > 0:
                step = -gradient / slope
    history.append((tau, gradient))
    return cfg.clamp_tau(tau + cfg.limit_tau_step(tau, step))


class AndersonMixer:
    """
    Anderson acceleration of a fixed-point map y -> T(y).

    The next iterate is T(y) corrected by the combination of recent output
    differences whose residual differences best cancel T(y) - y.
    """
    def __init__(self, depth):
        self.depth = depth
        self._residual_steps = deque(maxlen=max(depth, 1))
        self._output_steps = deque(maxlen=max(depth, 1))
        self._last = None

    def next(self, y, output):
        residual = output - y
        if self._last is not None:
            last_residual, last_output = self._last
            self._residual_steps.append(residual - last_residual)
            self._output_steps.append(output - last_output)
        self._last = (residual, output)
        if self.depth == 0 or not self._residual_steps:
            return output
        gamma = np.linalg.lstsq(np.column_stack(self._residual_steps), residual, rcond=MIXING_CUTOFF)[0]
        return output - np.column_stack(self._output_steps) @ gamma


def _forcing(model, affine, weights, states, controls, costates):
    """
    Frozen terms of the linear TPBVP on a grid.

    Returns:
        w_x = g - B R^-1 g_u^T lam_prev, w_lam = -g_x^T lam_prev, and g_u^T lam_prev
    """
    BR = affine.B @ weights.R_inv
    w_x, w_lam, gu_lam = [], [], []
    for x, u, lam in zip(states, controls, costates):
        gul = g_u(model, x, u, affine).T @ lam
        w_x.append(residual_g(model, x, u, affine) - BR @ gul)
        w_lam.append(-g_x(model, x, u, affine).T @ lam)
        gu_lam.append(gul)
    return np.array(w_x), np.array(w_lam), np.array(gu_lam)


class SuccessiveApproximation:
    """
    Successive-approximation stages around one affine model.

    The Gramian of the affine model is integrated once and shared by every
    pass, arrival time and continuation stage of a solve.
    """
    def __init__(self, model, weights, x0, affine, cfg):
        self.model = model
        self.weights = weights
        self.x0 = x0
        self.affine = affine
        self.cfg = cfg
        self._gramian = None

    def _gramian_at(self, tau, stats):
        if self._gramian is None:
            self._gramian = GramianIntegrator(self.affine, None, FORWARD, self.cfg.integrator.dt, stats,
                                              label="sa_gramian")
        return self._gramian.at(tau)[1]

    def sweep(self, x1, times, states, costates, stats):
        """
        One linear TPBVP solve with the remainder frozen on (states, costates).

        Args:
            x1: Target state
            times: Uniform grid over [0, tau]
            states: Iterate states on the grid
            costates: Iterate costates on the grid
            stats: IntegrationStats receiving the 4n integrated ODEs

        Returns:
            TrajectorySegment on the same grid
        """
        model, weights, affine = self.model, self.weights, self.affine
        n = affine.n
        A, S = affine.A, affine.S
        tau = float(times[-1])
        grid_cfg = self.cfg.integrator.uniform(tau)

        controls = np.array([optimal_control(model, x, lam, weights) for x, lam in zip(states, costates)])
        w_x, w_lam, gu_lam = _forcing(model, affine, weights, states, controls, costates)
        w_x_at = CubicInterpolant(times, w_x)
        w_lam_at = CubicInterpolant(times, w_lam)

        lam_p = integrate(lambda t, y: -A.T @ y + w_lam_at(t), np.zeros(n), tau, 0.0, grid_cfg,
                          stats=stats, label="sa_lambda_p").reversed()
        lam_p_at = CubicInterpolant(lam_p.times, lam_p.values)

        x_h = integrate(lambda t, y: A @ y - S @ lam_p_at(t) + w_x_at(t), self.x0, 0.0, tau, grid_cfg,
                        stats=stats, label="sa_homogeneous")
        G = self._gramian_at(tau, stats)
        lam_tau = -GramianFactor(G).solve(x1 - x_h.final)

        def coupled(t, y):
            x, lam = y[:n], y[n:]
            return np.concatenate([A @ x - S @ lam + w_x_at(t), -A.T @ lam + w_lam_at(t)])

        sol = integrate(coupled, np.concatenate([x1, lam_tau]), tau, 0.0, grid_cfg,
                        stats=stats, label="sa_coupled").reversed()
        new_states = sol.values[:, :n]
        new_costates = sol.values[:, n:]
        new_controls = -(new_costates @ affine.B + gu_lam) @ weights.R_inv.T
        return TrajectorySegment(
            times=sol.times,
            states=new_states,
            controls=new_controls,
            costates=new_costates,
            duration=tau,
            cost=trajectory_cost(sol.times, new_controls, weights),
        )

    def settle(self, x1, start, tau, result):
        """
        Passes at a fixed arrival time until the iterate stops changing.

        Every pass is recorded on `result` as one iteration.

        Returns:
            The settled segment, or None with result.reason set
        """
        cfg = self.cfg
        n = self.affine.n
        grid_cfg = cfg.integrator.uniform(tau)
        times = grid_cfg.dt * np.arange(int(round(tau / grid_cfg.dt)) + 1)
        times[-1] = tau
        states, _, costates = normalized_resample(start, times, tau)
        mixer = AndersonMixer(cfg.anderson_depth)
        monitor = DivergenceMonitor()

        for sweep in range(cfg.max_sweeps):
            stats = IntegrationStats()
            try:
                segment = self.sweep(x1, times, states, costates, stats)
            except (IntegrationDiverged, SingularMatrixError) as e:
                result.iterations += 1
                result.ode_counts.append(stats.total)
                result.reason = f"failed: {e}"
                logger.debug(3, f"SA pass {result.iterations} failed: {e}")
                return None

            change = iterate_change(segment.states, segment.costates, states, costates)
            residual = boundary_residual(segment.states, self.x0, x1)
            h_max = float(np.max(np.abs(hamiltonian_profile(self.model, segment.states, segment.costates,
                                                            self.weights))))
            result.record(residual, h_max, change, stats.total)
            result.segment = segment

            if monitor.diverged(change if math.isfinite(h_max) else math.inf):
                result.reason = "diverged"
                logger.debug(3, f"SA diverged at tau={tau:.4f} (change {change:.3e})")
                return None
            if sweep > 0 and change < cfg.boundary_tol:
                return segment

            mixed = mixer.next(np.hstack([states, costates]).ravel(),
                               np.hstack([segment.states, segment.costates]).ravel()).reshape(-1, 2 * n)
            states, costates = mixed[:, :n], mixed[:, n:]

        result.reason = f"max_sweeps at tau={tau:.4f}"
        return None

    def __call__(self, x1, guess, result):
        """Solve for target x1 from guess=(segment, affine), recording into `result`."""
        cfg = self.cfg
        segment = guess[0]
        tau = segment.duration
        history = []

        for _ in range(cfg.max_iters):
            segment = self.settle(x1, segment, tau, result)
            if segment is None:
                return
            if result.residual_history[-1] <= cfg.boundary_tol and result.hamiltonian_history[-1] <= cfg.hamiltonian_tol:
                result.converged = True
                result.reason = "converged"
                return
            lam_tau = segment.costates[-1]
            gradient = final_time_gradient(self.model, x1, lam_tau, lam_tau, self.affine, self.weights,
                                           segment.controls[-1])
            tau = next_arrival_time(tau, gradient, history, cfg)

        result.reason = "max_iters"


def solve_sa(model, weights, x0, x1, cfg=None, guess=None):
    """
    Successive-approximation TPBVP solver.

    Args:
        model: SystemModel
        weights: CostWeights
        x0: Initial state
        x1: Final state
        cfg: SolverConfig
        guess: Optional (segment, affine) initial guess, e.g. reused from steering

    Returns:
        TpbvpSolution; never converged=True with failing residual checks
    """
    cfg = cfg or SolverConfig()
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    guess = guess if guess is not None else initial_guess(model, x0, x1, weights, cfg)
    stage = SuccessiveApproximation(model, weights, x0, guess[1], cfg)
    return solve_staged(stage, model, weights, x0, x1, cfg, guess, "sa")
