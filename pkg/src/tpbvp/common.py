"""
Shared contract of the nonlinear TPBVP solvers: configuration, results and
residual checks, the affine initial guess and the staged approach to far targets.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from src.affine_ocp import DEFAULT_TAU_MAX, TrajectorySegment, solve_affine
from src.dynamics import hamiltonian, linearize
from src.numeric import IntegrationStats, IntegratorConfig, LinearInterpolant, integrate
from src.utils.errors import ContractError, IntegrationDiverged
from src.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """
    Settings shared by the iterative solvers.

    Args:
        max_iters: Iteration budget (arrival-time updates for successive approximation,
            Newton steps for variation of extremals)
        boundary_tol: Scaled endpoint residual and iterate-change tolerance
        hamiltonian_tol: Bound on max_t |H(t)| at convergence
        step_size: First final-time gradient step of successive approximation
        newton_damping: Initial Newton step fraction of variation of extremals
        max_halvings: Step halvings in the VE line search
        tikhonov: Shift added to a singular Newton matrix before giving up
        tau_min: Smallest arrival time (the integrator step when None)
        tau_max: Largest arrival time
        integrator: IntegratorConfig for every ODE the solvers integrate
        max_sweeps: Trajectory passes allowed at one arrival time (SA)
        anderson_depth: Past passes mixed into the next SA iterate; 0 disables mixing
        max_tau_change: Largest relative change of tau in one update
        continuation_threshold: Scaled endpoint miss of the replayed guess above which
            the target is approached in stages
        continuation_step: Largest fraction of x1 - x0 covered by one stage
        min_continuation_step: Stage fraction below which continuation gives up
    """
    max_iters: int = 30
    boundary_tol: float = 1e-4
    hamiltonian_tol: float = 1e-3
    step_size: float = 0.1
    newton_damping: float = 1.0
    max_halvings: int = 5
    tikhonov: float = 1e-8
    tau_min: float = None
    tau_max: float = DEFAULT_TAU_MAX
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    max_sweeps: int = 25
    anderson_depth: int = 5
    max_tau_change: float = 0.5
    continuation_threshold: float = 0.05
    continuation_step: float = 0.25
    min_continuation_step: float = 1.0 / 64.0

    def __post_init__(self):
        if self.max_iters < 1 or self.max_sweeps < 2:
            raise ContractError("max_iters must be at least 1 and max_sweeps at least 2")
        if not (self.boundary_tol > 0 and self.hamiltonian_tol > 0 and self.step_size > 0):
            raise ContractError("solver tolerances and step size must be positive")
        if not 0 < self.newton_damping <= 1:
            raise ContractError("newton_damping must lie in (0, 1]")
        if self.anderson_depth < 0 or not self.max_tau_change > 0:
            raise ContractError("anderson_depth must be non-negative and max_tau_change positive")
        if not 0 < self.min_continuation_step <= self.continuation_step <= 1:
            raise ContractError("need 0 < min_continuation_step <= continuation_step <= 1")
        if self.tau_min is None:
            object.__setattr__(self, "tau_min", self.integrator.dt)
        if not 0 < self.tau_min < self.tau_max:
            raise ContractError("need 0 < tau_min < tau_max")

    def clamp_tau(self, tau):
        return min(max(tau, self.tau_min), self.tau_max)

    def limit_tau_step(self, tau, step):
        """Step clipped to max_tau_change * tau in either direction."""
        bound = self.max_tau_change * tau
        return min(max(step, -bound), bound)


@dataclass
class InfluenceMatrices:
    """Sensitivities dx(t)/dlambda(0) and dlambda(t)/dlambda(0) at the grid times."""
    times: np.ndarray
    P_x: np.ndarray
    P_lam: np.ndarray

    @property
    def final(self):
        return self.P_x[-1], self.P_lam[-1]


@dataclass
class TpbvpSolution:
    """
    Outcome of one solver invocation.

    Args:
        segment: Final iterate
        method: 'sa', 've' or 'linearized'
        converged: Convergence contract satisfied
        iterations: Iterations performed
        residual_history: Scaled boundary residual per iteration
        hamiltonian_history: max_t |H(t)| per iteration
        change_history: Sup-norm change of (x, lambda) per iteration
        ode_counts: First-order ODEs integrated per iteration
        reason: Why the solver stopped
        stages: Target stages solved (1 unless continuation ran)
        setup_odes: ODEs integrated outside the iterations (guess replay)
    """
    segment: TrajectorySegment
    method: str
    converged: bool
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    hamiltonian_history: list = field(default_factory=list)
    change_history: list = field(default_factory=list)
    ode_counts: list = field(default_factory=list)
    reason: str = ""
    stages: int = 1
    setup_odes: int = 0

    @property
    def cost(self):
        return self.segment.cost if self.segment is not None else math.inf

    @property
    def tau(self):
        return self.segment.duration if self.segment is not None else math.nan

    @property
    def total_odes(self):
        return int(sum(self.ode_counts)) + self.setup_odes

    def record(self, residual, h_max, change, odes):
        self.iterations += 1
        self.residual_history.append(residual)
        self.hamiltonian_history.append(h_max)
        self.change_history.append(change)
        self.ode_counts.append(odes)

    def absorb(self, stage):
        """Append the bookkeeping of one continuation stage."""
        self.iterations += stage.iterations
        self.residual_history.extend(stage.residual_history)
        self.hamiltonian_history.extend(stage.hamiltonian_history)
        self.change_history.extend(stage.change_history)
        self.ode_counts.extend(stage.ode_counts)
        self.setup_odes += stage.setup_odes
        self.stages += 1


def initial_guess(model, x0, x1, weights, cfg):
    """
    Affine solution of the problem linearized at x0.

    Returns:
        (segment, affine model); the segment carries lambda(t) and tau*

    Raises:
        UnreachableStateError: when the affine problem has no finite cost
    """
    affine = linearize(model, x0, weights=weights)
    segment = solve_affine(affine, x0, x1, cfg.integrator, tau_max=cfg.tau_max)
    return segment, affine


def boundary_residual(states, x0, x1):
    """Largest endpoint mismatch, each scaled by 1 + |target|_inf."""
    start = np.max(np.abs(states[0] - x0)) / (1.0 + np.max(np.abs(x0)))
    end = np.max(np.abs(states[-1] - x1)) / (1.0 + np.max(np.abs(x1)))
    return float(max(start, end))


def hamiltonian_profile(model, states, costates, weights):
    return np.array([hamiltonian(model, x, lam, weights) for x, lam in zip(states, costates)])


def normalized_resample(segment, times, tau):
    """
    Previous iterate evaluated at the same fraction of its own duration.

    Returns:
        (states, controls, costates) at segment time t * segment.duration / tau
    """
    s = np.asarray(times) * (segment.duration / tau)
    base = segment.times - segment.times[0]
    states = LinearInterpolant(base, segment.states).resample(s)
    controls = LinearInterpolant(base, segment.controls).resample(s)
    costates = LinearInterpolant(base, segment.costates).resample(s)
    return states, controls, costates


def iterate_change(states, costates, prev_states, prev_costates):
    return float(max(np.max(np.abs(states - prev_states)), np.max(np.abs(costates - prev_costates))))


class DivergenceMonitor:
    """Flags a residual that grew on `patience` consecutive iterations."""
    def __init__(self, patience=3):
        self.patience = patience
        self.history = []

    def diverged(self, residual):
        if not math.isfinite(residual):
            return True
        self.history.append(residual)
        if len(self.history) <= self.patience:
            return False
        recent = self.history[-(self.patience + 1):]
        return all(b > a for a, b in zip(recent[:-1], recent[1:]))


def guess_residual(model, x0, x1, segment, cfg, stats=None):
    """
    Scaled endpoint miss of the guess controls replayed through the nonlinear model.

    Returns:
        boundary_residual of the open-loop rollout; +inf when it diverges
    """
    control_at = LinearInterpolant(segment.times - segment.times[0], segment.controls)
    tau = segment.duration
    try:
        sol = integrate(lambda t, x: model.f(x, control_at(t)), x0, 0.0, tau, cfg.integrator.uniform(tau),
                        stats=stats, label="guess_rollout")
    except IntegrationDiverged:
        return math.inf
    return boundary_residual(sol.values, x0, x1)


def solve_staged(stage, model, weights, x0, x1, cfg, guess, method):
    """
    Run a solver stage on the whole problem or along a homotopy of targets.

    The targets x0 + s (x1 - x0) are solved for increasing s, each stage
    warm-started from the last converged one. Continuation runs straight away
    when the replayed guess misses x1 by more than cfg.continuation_threshold,
    and after a failed direct attempt otherwise. The stage step doubles after a
    success (up to cfg.continuation_step) and halves after a failure.

    Args:
        stage: Callable (target, guess, result) that iterates on one target and
            records into `result`
        model: SystemModel
        weights: CostWeights
        x0: Initial state
        x1: Final state
        cfg: SolverConfig
        guess: (segment, affine) for the whole problem
        method: Solver tag stored on the result

    Returns:
        TpbvpSolution accumulated over every stage
    """
    segment, affine = guess
    result = TpbvpSolution(segment=segment, method=method, converged=False)
    stats = IntegrationStats()
    gap = guess_residual(model, x0, x1, segment, cfg, stats)
    result.setup_odes = stats.total
    if gap <= cfg.continuation_threshold:
        stage(x1, guess, result)
        if result.converged:
            return result
        logger.debug(3, f"{method} direct solve stopped ({result.reason}); approaching the target in stages")
    else:
        result.stages = 0
        logger.debug(3, f"{method} guess misses the target by {gap:.3e}; approaching it in stages")

    s, step, warm = 0.0, cfg.continuation_step, None
    while s < 1.0:
        s_next = min(1.0, s + step)
        target = x1 if s_next >= 1.0 else x0 + s_next * (x1 - x0)
        stage_guess = (warm, affine) if warm is not None else initial_guess(model, x0, target, weights, cfg)
        trial = TpbvpSolution(segment=stage_guess[0], method=method, converged=False)
        stage(target, stage_guess, trial)
        result.absorb(trial)
        result.segment = trial.segment
        if trial.converged:
            s, warm = s_next, trial.segment
            step = min(2.0 * step, cfg.continuation_step)
            continue
        step *= 0.5
        if step < cfg.min_continuation_step:
            result.reason = f"continuation stalled at s={s:.4f} ({trial.reason})"
            return result

    result.converged = True
    result.reason = f"converged in {result.stages} stages"
    return result
