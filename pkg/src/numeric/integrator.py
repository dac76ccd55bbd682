"""
Fixed-step ODE integration.

Every "integrate" in the toolkit (Gramians, costates, influence matrices,
rollouts) goes through `iterate`, so runs are bit-deterministic for a seed.
Matrix ODEs are flattened into vectors by the caller.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from src.utils.errors import ContractError, IntegrationDiverged

# Fraction of a step below which a trailing remainder is treated as round-off.
STEP_SNAP = 1e-9


@dataclass(frozen=True)
class IntegratorConfig:
    """
    Integrator settings.

    Args:
        dt: Step length in time units (default 1e-3)
        method: Scheme tag; only fixed-step "rk4" is provided
        tolerance: Accuracy the fixed step is expected to hold on first integrals
            of a trajectory; drift checks allow ten times this
    """
    dt: float = 1e-3
    method: str = "rk4"
    tolerance: float = 1e-6

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ContractError(f"integrator dt must be positive, got {self.dt}")
        if self.method != "rk4":
            raise ContractError(f"unknown integration method '{self.method}'")
        if not self.tolerance > 0:
            raise ContractError(f"integrator tolerance must be positive, got {self.tolerance}")

    @property
    def drift_bound(self):
        return 10.0 * self.tolerance

    def uniform(self, span):
        """
        Config whose step divides `span` exactly into ceil(span/dt) steps.

        Args:
            span: Positive interval length

        Returns:
            IntegratorConfig with dt <= self.dt
        """
        steps = max(1, math.ceil(abs(span) / self.dt - STEP_SNAP))
        return IntegratorConfig(dt=abs(span) / steps, method=self.method, tolerance=self.tolerance)


@dataclass
class OdeSolution:
    """Time-indexed samples of an integrated state."""
    times: np.ndarray
    values: np.ndarray

    @property
    def final(self):
        return self.values[-1]

    def reversed(self):
        """Same samples ordered by increasing time."""
        return OdeSolution(self.times[::-1].copy(), self.values[::-1].copy())


@dataclass
class IntegrationStats:
    """Counts first-order ODEs integrated, grouped by a caller-chosen label."""
    counts: dict = field(default_factory=dict)

    def record(self, label, dimension):
        self.counts[label] = self.counts.get(label, 0) + int(dimension)

    @property
    def total(self):
        return sum(self.counts.values())


def time_grid(t0, t1, dt):
    """
    Sample times from t0 to t1 inclusive with step dt (negated when t1 < t0).

    The final partial step is shortened to land exactly on t1.
    """
    span = abs(t1 - t0)
    direction = 1.0 if t1 >= t0 else -1.0
    full = int(math.floor(span / dt + STEP_SNAP))
    times = t0 + direction * dt * np.arange(full + 1, dtype=float)
    if span - full * dt > STEP_SNAP * dt:
        times = np.append(times, t1)
    else:
        times[-1] = t1
    return times


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _checked(rhs):
    def wrapped(t, y):
        dy = np.asarray(rhs(t, y), dtype=float)
        if not np.all(np.isfinite(dy)):
            raise IntegrationDiverged(t)
        return dy
    return wrapped


def iterate(rhs, y0, t0, t1, cfg):
    """
    Step an ODE from t0 to t1, yielding (t, y) at every grid point including t0.

    Args:
        rhs: Callable (t, y) -> dy/dt
        y0: Initial value
        t0: Start time
        t1: End time (may be smaller than t0 for backward integration)
        cfg: IntegratorConfig

    Yields:
        (time, state) tuples; the state array is never mutated afterwards

    Raises:
        IntegrationDiverged: when rhs returns NaN/Inf
    """
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise IntegrationDiverged(t0, "non-finite initial value")
    checked = _checked(rhs)
    times = time_grid(t0, t1, cfg.dt)
    yield times[0], y
    for t_prev, t_next in zip(times[:-1], times[1:]):
        y = rk4_step(checked, t_prev, y, t_next - t_prev)
        if not np.all(np.isfinite(y)):
            raise IntegrationDiverged(t_next)
        yield t_next, y


def integrate(rhs, y0, t0, t1, cfg, stats=None, label="ode"):
    """
    Integrate an ODE over [t0, t1] and return every sample.

    Args:
        rhs: Callable (t, y) -> dy/dt
        y0: Initial value
        t0: Start time
        t1: End time, either side of t0
        cfg: IntegratorConfig
        stats: Optional IntegrationStats that receives len(y0) under `label`
        label: Counter label

    Returns:
        OdeSolution ordered as integrated (decreasing times for backward runs)
    """
    if t0 == t1:
        raise ContractError("integration interval is empty")
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if stats is not None:
        stats.record(label, y0.size)
    samples = list(iterate(rhs, y0, t0, t1, cfg))
    times = np.array([t for t, _ in samples])
    values = np.vstack([y for _, y in samples])
    return OdeSolution(times, values)


class LinearInterpolant:
    """
    Piecewise-linear interpolation of vector samples on an increasing grid.

    Used to evaluate forcing terms stored on a grid at RK4 stage times.
    """
    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]

    def __call__(self, t):
        times = self.times
        if t <= times[0]:
            return self.values[0].copy()
        if t >= times[-1]:
            return self.values[-1].copy()
        j = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[j]) / (times[j + 1] - times[j])
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def resample(self, new_times):
        """Values at each of `new_times` (column-wise numpy interpolation)."""
        new_times = np.asarray(new_times, dtype=float)
        return np.column_stack([
            np.interp(new_times, self.times, self.values[:, k]) for k in range(self.values.shape[1])
        ])


class CubicInterpolant:
    """
    Cubic-spline interpolation of vector samples on an increasing grid.

    Keeps interpolated forcing terms fourth-order accurate at RK4 half steps.
    """
    def __init__(self, times, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self._spline = CubicSpline(np.asarray(times, dtype=float), values, axis=0)

    def __call__(self, t):
        return self._spline(t)
