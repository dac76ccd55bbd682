"""
Free-final-time optimal control of affine systems.

For x' = A x + B u + c with cost integral of 1 + 1/2 u^T R u, the optimal
cost of reaching x1 from x0 in time tau is

    C(tau) = tau + 1/2 (x1 - x_h(tau))^T G(tau)^{-1} (x1 - x_h(tau))

where x_h is the uncontrolled drift from x0 and G the weighted reachability
Gramian. Scanning C over the integrator grid gives the optimal arrival time;
the costate at tau then reconstructs the whole trajectory.
"""

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson, trapezoid

from src.numeric import GramianFactor, IntegratorConfig, integrate, rk4_step
from src.numeric.integrator import STEP_SNAP
from src.utils.errors import ContractError, IntegrationDiverged, SingularMatrixError, UnreachableStateError
from src.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_TAU_MAX = 50.0

FORWARD = "forward"
BACKWARD = "backward"


@dataclass
class AffineModel:
    """
    x' = A x + B u + c, with the control weights of the running cost.

    Args:
        A: n x n
        B: n x m
        c: Length-n constant drift
        weights: CostWeights (anything exposing R and R_inv)
    """
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    weights: object = None
    S: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B[:, None]
        self.c = np.asarray(self.c, dtype=float)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.c.shape != (n,):
            raise ContractError(f"inconsistent affine model shapes A{self.A.shape} B{self.B.shape} c{self.c.shape}")
        if self.weights is not None:
            if self.weights.R.shape != (self.B.shape[1], self.B.shape[1]):
                raise ContractError(f"R has shape {self.weights.R.shape}, expected m = {self.B.shape[1]}")
            self.S = self.B @ self.weights.R_inv @ self.B.T
        else:
            self.S = None

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def require_weights(self):
        if self.weights is None:
            raise ContractError("affine model has no cost weights attached")
        return self.weights

    def f(self, x, u):
        return self.A @ x + self.B @ u + self.c


@dataclass
class GramianTable:
    """
    Samples of the drift solution and the reachability Gramian on a uniform grid.

    G(0) = 0 and G(t) is symmetric positive semidefinite for t > 0.
    """
    times: np.ndarray
    x_h: np.ndarray
    G: np.ndarray
    direction: str = FORWARD

    def index_of(self, tau):
        k = int(np.searchsorted(self.times, tau - STEP_SNAP * max(1.0, abs(tau))))
        if k >= len(self.times) or abs(self.times[k] - tau) > 1e-9 * max(1.0, abs(tau)):
            raise ContractError(f"tau={tau:g} is not on the table grid")
        return k


@dataclass
class DistanceResult:
    """
    Result of the optimal-arrival-time scan.

    cost/tau_star carry the parabolic refinement; grid_cost/grid_tau are the raw
    grid minimum used for ranking candidates. `valid` is True when the incumbent
    stop rule fired before tau_max.
    """
    cost: float
    tau_star: float
    valid: bool
    grid_cost: float = math.inf
    grid_tau: float = math.nan

    @property
    def reachable(self):
        return math.isfinite(self.cost)


@dataclass
class TrajectorySegment:
    """
    A sampled trajectory (x(t), u(t), lambda(t)) over [times[0], times[-1]].

    Args:
        times: Increasing sample times
        states: (N, n)
        controls: (N, m)
        costates: (N, n) or None when the segment carries no costate
        duration: times[-1] - times[0]
        cost: Quadrature of 1 + 1/2 u^T R u
    """
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    costates: np.ndarray = None
    duration: float = 0.0
    cost: float = 0.0

    @property
    def start(self):
        return self.states[0]

    @property
    def end(self):
        return self.states[-1]

    def endpoint_residual(self, x0, x1):
        """max(|x(start) - x0|_inf, |x(end) - x1|_inf)."""
        return max(float(np.max(np.abs(self.states[0] - x0))), float(np.max(np.abs(self.states[-1] - x1))))

    def shifted(self, offset):
        return TrajectorySegment(self.times + offset, self.states, self.controls, self.costates,
                                 self.duration, self.cost)


def trajectory_cost(times, controls, weights):
    """
    Quadrature of the running cost 1 + 1/2 u^T R u over the samples.

    Simpson's rule when there are at least three samples, trapezoid otherwise.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        return 0.0
    running = weights.running_cost(controls)
    if len(times) >= 3:
        return float(simpson(running, x=times))
    return float(trapezoid(running, x=times))


def concatenate_segments(segments):
    """
    Join consecutive segments into one, with time re-based to start at 0.

    Junction samples shared by neighbouring segments appear once.
    """
    if not segments:
        return None
    times, states, controls, costates = [], [], [], []
    offset = 0.0
    with_costates = all(s.costates is not None for s in segments)
    for i, seg in enumerate(segments):
        skip = 0 if i == 0 else 1
        times.append(seg.times[skip:] - seg.times[0] + offset)
        states.append(seg.states[skip:])
        controls.append(seg.controls[skip:])
        if with_costates:
            costates.append(seg.costates[skip:])
        offset += seg.times[-1] - seg.times[0]
    return TrajectorySegment(
        times=np.concatenate(times),
        states=np.vstack(states),
        controls=np.vstack(controls),
        costates=np.vstack(costates) if with_costates else None,
        duration=offset,
        cost=float(sum(s.cost for s in segments)),
    )


class GramianIntegrator:
    """
    Lazily stepped solution of x_h' = A x_h + c, G' = A G + G A^T + B R^-1 B^T.

    Only the n(n+1)/2 upper-triangle entries of G are integrated. Samples sit at
    t_k = k * dt exactly. BACKWARD integrates the time-reversed system
    (-A, -c, same B R^-1 B^T), which keeps G positive semidefinite. With
    `anchor=None` only the Gramian is integrated.
    """
    def __init__(self, affine, anchor=None, direction=FORWARD, dt=1e-3, stats=None, label="gramian"):
        if affine.S is None:
            raise ContractError("Gramian integration needs cost weights")
        if direction not in (FORWARD, BACKWARD):
            raise ContractError(f"unknown direction '{direction}'")
        sign = 1.0 if direction == FORWARD else -1.0
        self.n = affine.n
        self.A = sign * affine.A
        self.c = sign * affine.c
        self.S = affine.S
        self.dt = float(dt)
        self.direction = direction
        self.with_drift = anchor is not None
        self._iu = np.triu_indices(self.n)
        packed = np.zeros(len(self._iu[0]))
        y0 = np.concatenate([np.asarray(anchor, dtype=float), packed]) if self.with_drift else packed
        self._values = [y0]
        if stats is not None:
            stats.record(label, y0.size)

    def _unpack(self, packed):
        G = np.zeros((self.n, self.n))
        G[self._iu] = packed
        return G + np.triu(G, 1).T

    def _rhs(self, t, y):
        n = self.n
        if self.with_drift:
            x_h, packed = y[:n], y[n:]
            dx = self.A @ x_h + self.c
        else:
            packed = y
        G = self._unpack(packed)
        dG = self.A @ G + G @ self.A.T + self.S
        if self.with_drift:
            return np.concatenate([dx, dG[self._iu]])
        return dG[self._iu]

    def _split(self, y):
        if self.with_drift:
            return y[:self.n], self._unpack(y[self.n:])
        return None, self._unpack(y)

    def step(self):
        k = len(self._values) - 1
        y = rk4_step(self._rhs, k * self.dt, self._values[-1], self.dt)
        if not np.all(np.isfinite(y)):
            raise IntegrationDiverged((k + 1) * self.dt, "Gramian integration produced non-finite values")
        self._values.append(y)

    def sample(self, k):
        """(t_k, x_h(t_k), G(t_k)), stepping forward as needed."""
        while len(self._values) <= k:
            self.step()
        x_h, G = self._split(self._values[k])
        return k * self.dt, x_h, G

    def at(self, tau):
        """(x_h(tau), G(tau)) for any tau >= 0, with one partial step when tau is off-grid."""
        k = int(math.floor(tau / self.dt + STEP_SNAP))
        t_k, _, _ = self.sample(k)
        remainder = tau - t_k
        if remainder <= STEP_SNAP * self.dt:
            return self._split(self._values[k])
        y = rk4_step(self._rhs, t_k, self._values[k], remainder)
        return self._split(y)


def propagate_gramian(affine, x0, t_end, direction=FORWARD, cfg=None, stats=None):
    """
    Integrate the drift solution and Gramian up to t_end.

    Args:
        affine: AffineModel with weights
        x0: Anchor state (initial state forward, final state backward)
        t_end: Positive horizon
        direction: FORWARD or BACKWARD (time-reversed system)
        cfg: IntegratorConfig; the step is shrunk so the grid lands on t_end

    Returns:
        GramianTable
    """
    if not t_end > 0:
        raise ContractError(f"Gramian horizon must be positive, got {t_end}")
    cfg = (cfg or IntegratorConfig()).uniform(t_end)
    steps = int(round(t_end / cfg.dt))
    integ = GramianIntegrator(affine, x0, direction, cfg.dt, stats)
    samples = [integ.sample(k) for k in range(steps + 1)]
    times = np.array([s[0] for s in samples])
    times[-1] = t_end
    return GramianTable(
        times=times,
        x_h=np.vstack([s[1] for s in samples]),
        G=np.stack([s[2] for s in samples]),
        direction=direction,
    )


def cost_at(table, x1, tau):
    """
    C(tau) for a grid time of the table.

    Returns:
        tau + 1/2 d^T G(tau)^-1 d with d = x1 - x_h(tau); +inf when d leaves the
        column space of a singular Gramian
    """
    k = table.index_of(tau)
    d = np.asarray(x1, dtype=float) - table.x_h[k]
    if k == 0:
        return float(table.times[0]) if not np.any(d) else math.inf
    q = GramianFactor(table.G[k]).quadratic_forms(d)[0]
    cost = float(table.times[k] + 0.5 * q)
    assert cost >= table.times[k]
    return cost


CostScan = namedtuple("CostScan", ["costs", "taus", "horizon_reached", "steps", "stop_fired", "history"])


def scan_costs(affine, anchor, candidates, cfg, horizon, direction=FORWARD, incumbent_stop=True,
               stats=None, keep_history=False):
    """
    Score many candidate endpoints with one Gramian sweep from `anchor`.

    Forward sweeps treat `anchor` as the initial state and the candidates as
    targets; backward sweeps treat `anchor` as the final state and the
    candidates as origins. Every candidate is scored at every grid time
    t_k = k dt, k >= 1.

    Args:
        affine: AffineModel linearized at the anchor
        anchor: Anchor state
        candidates: Array (k, n)
        cfg: IntegratorConfig (its dt is the scan resolution)
        horizon: Scan stops once t >= horizon
        direction: FORWARD or BACKWARD
        incumbent_stop: Also stop once t >= the smallest cost found so far
        keep_history: Return the per-step cost arrays

    Returns:
        CostScan(costs, taus, horizon_reached, steps, stop_fired, history)
    """
    D = np.atleast_2d(np.asarray(candidates, dtype=float))
    best = np.full(D.shape[0], math.inf)
    best_tau = np.full(D.shape[0], math.nan)
    history = [] if keep_history else None
    integ = GramianIntegrator(affine, anchor, direction, cfg.dt, stats)
    stop_fired = False
    k = 0
    t = 0.0
    while True:
        k += 1
        t, x_h, G = integ.sample(k)
        costs = t + 0.5 * GramianFactor(G).quadratic_forms(D - x_h)
        improved = costs < best
        best[improved] = costs[improved]
        best_tau[improved] = t
        if keep_history:
            history.append(costs)
        if incumbent_stop and t >= best.min():
            stop_fired = True
            break
        if t >= horizon - STEP_SNAP * cfg.dt:
            break
    return CostScan(best, best_tau, t, k, stop_fired, history)


def _parabolic_refinement(history, k_best, dt):
    """Vertex of the parabola through the three samples around the grid minimum."""
    if k_best == 0 or k_best + 1 >= len(history):
        return None
    c_m, c_0, c_p = history[k_best - 1], history[k_best], history[k_best + 1]
    if not (math.isfinite(c_m) and math.isfinite(c_p)):
        return None
    curvature = c_p - 2.0 * c_0 + c_m
    if curvature <= 0.0:
        return None
    offset = 0.5 * dt * (c_m - c_p) / curvature
    cost = c_0 - (c_p - c_m) ** 2 / (8.0 * curvature)
    return offset, cost


def optimal_final_time(affine, x0, x1, tau_max=DEFAULT_TAU_MAX, cfg=None, direction=FORWARD, stats=None):
    """
    Minimize C(tau) over the grid, stopping once tau reaches the incumbent cost.

    Args:
        affine: AffineModel with weights
        x0: Initial state
        x1: Final state
        tau_max: Scan limit
        cfg: IntegratorConfig
        direction: FORWARD anchors the sweep at x0, BACKWARD at x1 (same cost,
            time-reversed Gramian); the planner's sweeps use the matching choice

    Returns:
        DistanceResult; cost is +inf when x1 is unreachable at every scanned tau
    """
    if not tau_max > 0:
        raise ContractError(f"tau_max must be positive, got {tau_max}")
    cfg = cfg or IntegratorConfig()
    anchor, target = (x0, x1) if direction == FORWARD else (x1, x0)
    scan = scan_costs(affine, anchor, [target], cfg, tau_max, direction, incumbent_stop=True,
                      stats=stats, keep_history=True)
    grid_cost = float(scan.costs[0])
    grid_tau = float(scan.taus[0])
    if not math.isfinite(grid_cost):
        return DistanceResult(math.inf, math.nan, False, math.inf, math.nan)

    history = [float(h[0]) for h in scan.history]
    k_best = int(round(grid_tau / cfg.dt)) - 1
    cost, tau_star = grid_cost, grid_tau
    refined = _parabolic_refinement(history, k_best, cfg.dt)
    if refined is not None:
        offset, refined_cost = refined
        tau_star = grid_tau + offset
        cost = max(min(refined_cost, grid_cost), tau_star)
    if not scan.stop_fired:
        logger.debug(2, f"optimal_final_time reached tau_max={tau_max:g} before the stop rule fired")
    return DistanceResult(cost, tau_star, scan.stop_fired, grid_cost, grid_tau)


def reconstruct_trajectory(affine, x1, lam_final, tau, cfg, stats=None, label="affine_bvp"):
    """
    Integrate x' = A x - B R^-1 B^T lambda + c, lambda' = -A^T lambda backward from tau to 0.

    Returns:
        TrajectorySegment with increasing times
    """
    n = affine.n
    weights = affine.require_weights()
    A, S, c = affine.A, affine.S, affine.c

    def rhs(t, y):
        x, lam = y[:n], y[n:]
        return np.concatenate([A @ x - S @ lam + c, -A.T @ lam])

    sol = integrate(rhs, np.concatenate([x1, lam_final]), tau, 0.0, cfg.uniform(tau),
                    stats=stats, label=label).reversed()
    states = sol.values[:, :n]
    costates = sol.values[:, n:]
    controls = -(costates @ affine.B) @ weights.R_inv.T
    return TrajectorySegment(
        times=sol.times,
        states=states,
        controls=controls,
        costates=costates,
        duration=float(tau),
        cost=trajectory_cost(sol.times, controls, weights),
    )


def terminal_costate(affine, x0, x1, tau, cfg, stats=None):
    """lambda(tau) = -G(tau)^-1 (x1 - x_h(tau))."""
    x_h, G = GramianIntegrator(affine, x0, FORWARD, cfg.uniform(tau).dt, stats).at(tau)
    try:
        return -GramianFactor(G).solve(np.asarray(x1, dtype=float) - x_h)
    except SingularMatrixError as e:
        raise UnreachableStateError(f"target unreachable in tau={tau:g}: {e}") from e


def solve_affine(affine, x0, x1, cfg=None, tau=None, tau_max=DEFAULT_TAU_MAX, stats=None):
    """
    Optimal trajectory of the affine problem from x0 to x1.

    Args:
        affine: AffineModel with weights
        x0: Initial state
        x1: Final state
        cfg: IntegratorConfig
        tau: Arrival time; the optimal one is computed when omitted
        tau_max: Scan limit when tau is computed

    Returns:
        TrajectorySegment sampled on a uniform grid of ceil(tau/dt) steps

    Raises:
        UnreachableStateError: when x1 cannot be reached
    """
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if tau is None:
        result = optimal_final_time(affine, x0, x1, tau_max, cfg, stats=stats)
        if not result.reachable:
            raise UnreachableStateError("target unreachable within tau_max")
        tau = result.tau_star
    if not tau > 0:
        raise ContractError(f"arrival time must be positive, got {tau}")
    lam_final = terminal_costate(affine, x0, x1, tau, cfg, stats)
    return reconstruct_trajectory(affine, x1, lam_final, tau, cfg, stats)
