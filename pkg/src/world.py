"""
Workspace model: obstacles, goal region, free-space sampling and trajectory
collision checking.

Robots expose their rigid pieces through `SystemModel.workspace_bodies`
(planar segments with a height interval). Systems without bodies (pendulum,
double integrator) live in an obstacle-free workspace.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from src.utils.errors import ContractError, SamplingStarved
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAX_REJECTIONS = 10_000
DEFAULT_RESOLUTION = 0.05
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Box:
    """Axis-aligned prism [x0, x1] x [y0, y1] x [z0, z1]."""
    x0: float
    x1: float
    y0: float
    y1: float
    z0: float = -math.inf
    z1: float = math.inf

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0 and self.z1 > self.z0):
            raise ContractError(f"box must have positive extents: {self}")

    def contains(self, points, z_low, z_high):
        px, py = points[:, 0], points[:, 1]
        planar = (px >= self.x0) & (px <= self.x1) & (py >= self.y0) & (py <= self.y1)
        return planar & (z_low <= self.z1) & (z_high >= self.z0)

    def contains_planar(self, points):
        px, py = points[:, 0], points[:, 1]
        return (px >= self.x0) & (px <= self.x1) & (py >= self.y0) & (py <= self.y1)


@dataclass(frozen=True)
class Circle:
    """Disc of radius r around (cx, cy), unbounded in height."""
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ContractError(f"circle radius must be positive: {self}")

    def contains(self, points, z_low, z_high):
        return np.hypot(points[:, 0] - self.cx, points[:, 1] - self.cy) <= self.r

    def contains_planar(self, points):
        return self.contains(points, None, None)


@dataclass(frozen=True)
class ObstacleSet:
    primitives: tuple = ()

    def __len__(self):
        return len(self.primitives)

    def hits(self, points, z_low, z_high):
        """True where a workspace point (with its height interval) lies inside any primitive."""
        hit = np.zeros(len(points), dtype=bool)
        for primitive in self.primitives:
            hit |= primitive.contains(points, z_low, z_high)
        return hit


@dataclass(frozen=True)
class GoalRegion:
    """
    Per-coordinate closed intervals; coordinates listed in `angle_coordinates`
    are tested modulo 2 pi.
    """
    lower: np.ndarray
    upper: np.ndarray
    angle_coordinates: tuple = ()

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ContractError("goal region needs lower <= upper per coordinate")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.lower.shape:
            raise ContractError(f"state has shape {x.shape}, goal region {self.lower.shape}")
        shifted = x.copy()
        for k in self.angle_coordinates:
            shifted[k] = self.lower[k] + np.mod(x[k] - self.lower[k], TWO_PI)
        return bool(np.all(shifted >= self.lower) and np.all(shifted <= self.upper))

    def sample(self, rng, lower, upper):
        """Uniform draw from the goal box intersected with the sampling box."""
        lo = np.where(np.isfinite(self.lower), self.lower, lower)
        hi = np.where(np.isfinite(self.upper), self.upper, upper)
        return lo + (hi - lo) * rng.random(len(lo))


def in_goal(x, goal):
    return goal.contains(x)


@dataclass(frozen=True)
class SamplerConfig:
    """
    Args:
        lower: Per-coordinate lower sampling bounds
        upper: Per-coordinate upper sampling bounds
        goal_bias: Probability of drawing from the goal region instead
        seed: Seed of the Philox counter-based generator
    """
    lower: np.ndarray
    upper: np.ndarray
    goal_bias: float = 0.05
    seed: int = 0

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape:
            raise ContractError("sampling bounds must have matching shapes")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ContractError("sampling bounds must be finite")
        if np.any(upper <= lower):
            raise ContractError("sampling box is empty")
        if not 0.0 <= self.goal_bias < 1.0:
            raise ContractError(f"goal_bias must lie in [0, 1), got {self.goal_bias}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


class Sampler:
    """Per-planner sampling state: a Philox generator seeded from the config."""
    def __init__(self, cfg):
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.Philox(cfg.seed))
        self.draws = 0

    def uniform(self):
        lo, hi = self.cfg.lower, self.cfg.upper
        return lo + (hi - lo) * self.rng.random(len(lo))


@dataclass
class World:
    """
    Obstacles and goal for one scenario.

    Args:
        model: SystemModel providing workspace bodies
        obstacles: ObstacleSet
        goal: GoalRegion
        resolution: Largest gap between consecutive checked workspace points (ds)
    """
    model: object
    obstacles: ObstacleSet = field(default_factory=ObstacleSet)
    goal: GoalRegion = None
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        if not self.resolution > 0:
            raise ContractError("collision resolution must be positive")

    def _bodies(self, states):
        """Body arrays (N, B, ...) for a batch of states."""
        bodies = [self.model.workspace_bodies(x) for x in states]
        if not bodies or not bodies[0]:
            return None
        starts = np.array([[b.start for b in row] for row in bodies], dtype=float)
        ends = np.array([[b.end for b in row] for row in bodies], dtype=float)
        z_low = np.array([[b.z_low for b in row] for row in bodies], dtype=float)
        z_high = np.array([[b.z_high for b in row] for row in bodies], dtype=float)
        return starts, ends, z_low, z_high

    def _subdivisions(self, length):
        """Smallest power of two p with length / p <= ds."""
        if length <= self.resolution:
            return 1
        return 1 << math.ceil(math.log2(length / self.resolution))

    def _bodies_hit(self, bodies):
        starts, ends, z_low, z_high = bodies
        for b in range(starts.shape[1]):
            length = float(np.max(np.linalg.norm(ends[:, b] - starts[:, b], axis=1)))
            pieces = self._subdivisions(length)
            fractions = np.arange(pieces + 1) / pieces
            points = starts[:, b, None, :] + fractions[None, :, None] * (ends[:, b, None, :] - starts[:, b, None, :])
            count = points.shape[1]
            hit = self.obstacles.hits(points.reshape(-1, 2),
                                      np.repeat(z_low[:, b], count), np.repeat(z_high[:, b], count))
            if np.any(hit):
                return True
        return False

    def state_free(self, x):
        if not len(self.obstacles):
            return True
        bodies = self._bodies([np.asarray(x, dtype=float)])
        return bodies is None or not self._bodies_hit(bodies)

    def obstacle_free(self, segment):
        """
        True iff no checked workspace point of the segment lies in an obstacle.

        Grid samples are checked first; between consecutive samples the state is
        interpolated at power-of-two subdivisions until body endpoints move at
        most ds per check.
        """
        if not len(self.obstacles):
            return True
        states = np.asarray(segment.states, dtype=float)
        bodies = self._bodies(states)
        if bodies is None:
            return True
        if self._bodies_hit(bodies):
            return False
        starts, ends = bodies[0], bodies[1]
        moves = np.maximum(np.linalg.norm(np.diff(starts, axis=0), axis=2),
                           np.linalg.norm(np.diff(ends, axis=0), axis=2)).max(axis=1)
        extra = []
        for i in np.flatnonzero(moves > self.resolution):
            pieces = self._subdivisions(float(moves[i]))
            fractions = np.arange(1, pieces) / pieces
            extra.extend(states[i] + f * (states[i + 1] - states[i]) for f in fractions)
        if extra:
            return not self._bodies_hit(self._bodies(np.array(extra)))
        return True


def obstacle_free(segment, world):
    return world.obstacle_free(segment)


def sample_free(world, sampler):
    """
    Draw a collision-free state, from the goal region with probability goal_bias.

    Raises:
        SamplingStarved: after MAX_REJECTIONS consecutive rejected draws
    """
    cfg = sampler.cfg
    for _ in range(MAX_REJECTIONS):
        sampler.draws += 1
        if world.goal is not None and sampler.rng.random() < cfg.goal_bias:
            x = world.goal.sample(sampler.rng, cfg.lower, cfg.upper)
        else:
            x = sampler.uniform()
        if world.state_free(x):
            return x
    raise SamplingStarved(MAX_REJECTIONS)


def classify_homotopy(segment, world, model):
    """
    'over' when an end-effector position of the path lies inside an obstacle's
    footprint, else 'around'; None for systems without forward kinematics.
    """
    if not hasattr(model, "forward_kinematics"):
        return None
    _, tool = model.forward_kinematics(np.asarray(segment.states, dtype=float))
    for primitive in world.obstacles.primitives:
        if np.any(primitive.contains_planar(tool)):
            return "over"
    return "around"


# Maps

def _corridor():
    return [
        Box(5.0, 6.0, 0.0, 8.0),
        Box(11.0, 12.0, 4.0, 12.0),
        Box(17.0, 18.0, 0.0, 8.0),
    ]


def _cluttered(count=25, seed=25):
    rng = np.random.Generator(np.random.Philox(seed))
    boxes = []
    keep_clear = [Box(-0.5, 2.0, -0.5, 2.0), Box(22.0, 25.0, 8.0, 11.0)]
    while len(boxes) < count:
        w, h = rng.uniform(0.6, 1.4, size=2)
        x0 = rng.uniform(2.0, 22.0 - w)
        y0 = rng.uniform(0.5, 11.0 - h)
        box = Box(x0, x0 + w, y0, y0 + h)
        corners = np.array([[box.x0, box.y0], [box.x1, box.y1], [box.x0, box.y1], [box.x1, box.y0]])
        if any(np.any(k.contains_planar(corners)) for k in keep_clear):
            continue
        boxes.append(box)
    return boxes


def _wall():
    return [Box(1.1, 2.1, 1.1, 2.1, 0.0, 3.5)]


NAMED_MAPS = {
    'corridor': _corridor,
    'cluttered25': _cluttered,
    'wall': _wall,
}


def named_map(name):
    """Primitives of a shipped map."""
    if name not in NAMED_MAPS:
        raise ContractError(f"unknown map '{name}' (known: {', '.join(NAMED_MAPS)})")
    return NAMED_MAPS[name]()
