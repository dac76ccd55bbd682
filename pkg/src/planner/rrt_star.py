"""
RRT* over the affine-quadratic pseudo-metric with TPBVP-solved edges.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from src.dynamics import linearize
from src.metric import nearest, near_backward, near_forward, steer
from src.planner.tree import PlanTree, best_solution
from src.tpbvp import SOLVERS, SolverConfig, solve_tpbvp
from src.utils.errors import ContractError, KinoplanError, SamplingStarved
from src.utils.logger import get_logger
from src.world import Sampler, SamplerConfig, sample_free

logger = get_logger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    """
    Args:
        max_nodes: Node budget (the planner stops once the tree holds this many nodes)
        max_iterations: Iteration cap; 50 x max_nodes when None
        eta: Largest edge cost produced by steering
        gamma_rrt: Connection radius constant
        solver: 'sa', 've' or 'linearized'
        sampler: SamplerConfig (bounds, goal bias, seed)
        solver_config: SolverConfig shared by every edge
        log_every: Progress log period in iterations
        u_max: Optional per-control bound for the post-hoc report
        snapshots: Node counts at which the tree is recorded
    """
    sampler: SamplerConfig
    max_nodes: int = 1000
    max_iterations: int = None
    eta: float = 5.0
    gamma_rrt: float = 50.0
    solver: str = "ve"
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    log_every: int = 100
    u_max: tuple = None
    snapshots: tuple = ()

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ContractError("max_nodes must be at least 1")
        if not (self.eta > 0 and self.gamma_rrt > 0):
            raise ContractError("eta and gamma_rrt must be positive")
        if self.solver not in SOLVERS:
            raise ContractError(f"unknown solver '{self.solver}'")
        if self.max_iterations is None:
            object.__setattr__(self, "max_iterations", 50 * self.max_nodes)
        object.__setattr__(self, "snapshots", tuple(sorted(set(self.snapshots))))

    @property
    def integrator(self):
        return self.solver_config.integrator


@dataclass
class SolverStatistics:
    """Edge-solve bookkeeping reported in run summaries."""
    attempts: int = 0
    converged: int = 0
    iterations: int = 0
    odes: int = 0
    steer_failures: int = 0
    metric_failures: int = 0
    solver_failures: int = 0
    collisions: int = 0
    rewires: int = 0

    def record(self, solution):
        self.attempts += 1
        self.iterations += solution.iterations
        self.odes += solution.total_odes
        if solution.converged:
            self.converged += 1
        else:
            self.solver_failures += 1

    @property
    def mean_iterations(self):
        return self.iterations / self.attempts if self.attempts else 0.0


@dataclass
class PlanResult:
    tree: PlanTree
    best: object
    best_cost: float
    iterations: int
    statistics: SolverStatistics
    best_by_nodes: list = field(default_factory=list)
    best_by_iteration: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.best is not None


def connection_radius(num_nodes, cfg, dimension):
    """min((gamma log(|V|+1) / (|V|+1))^(1/n), eta)."""
    if num_nodes < 1:
        raise ContractError("connection radius needs at least one node")
    v = num_nodes + 1
    return min((cfg.gamma_rrt * math.log(v) / v) ** (1.0 / dimension), cfg.eta)


class RRTStarPlanner:
    """
    Single-threaded RRT*: the tree and the sampler's generator together
    determine a run, so identical inputs give identical trees.
    """
    def __init__(self, model, world, weights, cfg):
        self.model = model
        self.world = world
        self.weights = weights
        self.cfg = cfg
        self.sampler = Sampler(cfg.sampler)
        self.stats = SolverStatistics()

    # Edges

    def _solve_edge(self, x_from, x_to, guess=None):
        """Converged, collision-free edge or None."""
        solver_cfg = self.cfg.solver_config
        try:
            solution = solve_tpbvp(self.cfg.solver, self.model, self.weights, x_from, x_to, solver_cfg, guess)
        except ContractError:
            raise
        except KinoplanError as e:
            self.stats.solver_failures += 1
            logger.debug(3, f"edge solve failed: {e}")
            return None
        self.stats.record(solution)
        if not solution.converged:
            logger.debug(3, f"{solution.method} edge not converged ({solution.reason})")
            return None
        if not self.world.obstacle_free(solution.segment):
            self.stats.collisions += 1
            return None
        return solution.segment

    def _query(self, query, *args):
        """Metric query; numerical failures count and return None."""
        try:
            return query(*args)
        except ContractError:
            raise
        except KinoplanError as e:
            self.stats.metric_failures += 1
            logger.debug(3, f"{query.__name__} failed: {e}")
            return None

    # Main loop

    def plan(self, x_init):
        """
        Grow the tree from x_init until the node budget or iteration cap is reached.

        Returns:
            PlanResult
        """
        x_init = np.asarray(x_init, dtype=float)
        if not self.world.state_free(x_init):
            raise ContractError("initial state is in collision")
        cfg = self.cfg
        integ = cfg.integrator
        tau_max = cfg.solver_config.tau_max
        tree = PlanTree(x_init, control_dim=self.model.m)
        if self.world.goal is not None and self.world.goal.contains(x_init):
            tree.mark_goal(0)
        result = PlanResult(tree, None, math.inf, 0, self.stats)
        best_cost = tree.best_goal()[1]

        logger.info(1, f"planning with {cfg.solver} edges, budget {cfg.max_nodes} nodes")
        iteration = 0
        while len(tree) < cfg.max_nodes and iteration < cfg.max_iterations:
            iteration += 1
            try:
                x_rand = sample_free(self.world, self.sampler)
            except SamplingStarved as e:
                logger.error(1, f"stopping early: {e}")
                break

            near_id = self._query(nearest, tree, x_rand, self.model, self.weights, integ, tau_max)
            if near_id is None:
                continue
            x_nearest = tree.nodes[near_id].state
            try:
                x_new, steered = steer(self.model, x_nearest, x_rand, cfg.eta, self.weights, integ, tau_max)
            except ContractError:
                raise
            except KinoplanError as e:
                self.stats.steer_failures += 1
                logger.debug(3, f"steer failed: {e}")
                continue

            guess = None
            if np.array_equal(x_new, x_rand):
                guess = (steered, linearize(self.model, x_nearest, weights=self.weights))
            edge = self._solve_edge(x_nearest, x_new, guess)
            if edge is None:
                continue
            parent, c_min, parent_edge = near_id, tree.cost(near_id) + edge.cost, edge

            radius = connection_radius(len(tree), cfg, self.model.n)
            for candidate in self._query(near_backward, tree, x_new, radius, self.model, self.weights, integ) or []:
                if candidate == near_id:
                    continue
                edge = self._solve_edge(tree.nodes[candidate].state, x_new)
                if edge is None:
                    continue
                c_new = tree.cost(candidate) + edge.cost
                if c_new < c_min:
                    parent, c_min, parent_edge = candidate, c_new, edge

            new_id = tree.add_node(x_new, parent, parent_edge, c_min)
            if self.world.goal is not None and self.world.goal.contains(x_new):
                tree.mark_goal(new_id)

            for candidate in self._query(near_forward, tree, x_new, radius, self.model, self.weights, integ) or []:
                if candidate in (new_id, parent) or tree.is_ancestor(candidate, new_id):
                    continue
                edge = self._solve_edge(x_new, tree.nodes[candidate].state)
                if edge is None:
                    continue
                c_new = tree.cost(new_id) + edge.cost
                if c_new < tree.cost(candidate):
                    tree.rewire(candidate, new_id, edge, c_new)
                    self.stats.rewires += 1

            _, best_cost = tree.best_goal()
            result.best_by_nodes.append((len(tree), best_cost))
            result.best_by_iteration.append((iteration, best_cost))
            if len(tree) in cfg.snapshots:
                result.snapshots[len(tree)] = (tree.table(), best_solution(tree))
            if iteration % cfg.log_every == 0:
                logger.info(2, f"iteration {iteration}: {len(tree)} nodes, best cost {best_cost:.4f}")

        result.iterations = iteration
        result.best = best_solution(tree)
        result.best_cost = best_cost
        logger.info(1, f"finished after {iteration} iterations: {len(tree)} nodes, best cost {best_cost:.4f}")
        return result


def plan(model, world, weights, cfg, x_init):
    """
    Run RRT* once.

    Returns:
        (tree, best trajectory or None)
    """
    result = RRTStarPlanner(model, world, weights, cfg).plan(x_init)
    return result.tree, result.best
