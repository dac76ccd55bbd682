"""
Tree bookkeeping for RRT*: nodes, parent links, children index and
cost-to-come propagation after rewiring.
"""

import math
from dataclasses import dataclass

import numpy as np

from src.affine_ocp import TrajectorySegment, concatenate_segments
from src.utils.errors import ContractError


@dataclass
class PlanNode:
    id: int
    state: np.ndarray
    parent: int = None
    cost: float = 0.0
    edge: TrajectorySegment = None


class PlanTree:
    """
    Nodes indexed by insertion id; id 0 is the root at x_init.

    A packed state matrix is kept alongside the nodes so metric sweeps can score
    every node without rebuilding arrays.
    """
    def __init__(self, x_init, control_dim=0):
        x_init = np.asarray(x_init, dtype=float)
        self.control_dim = control_dim
        self.nodes = [PlanNode(0, x_init)]
        self.children = {0: []}
        self.goal_ids = []
        self._states = np.empty((16, x_init.size))
        self._states[0] = x_init

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self):
        return self.nodes[0]

    def state_matrix(self):
        return self._states[:len(self.nodes)]

    def node_ids(self):
        return range(len(self.nodes))

    def cost(self, node_id):
        return self.nodes[node_id].cost

    def add_node(self, state, parent, edge, cost):
        """Insert a node under `parent` and return its id."""
        if parent not in self.children:
            raise ContractError(f"unknown parent id {parent}")
        node = PlanNode(len(self.nodes), np.asarray(state, dtype=float), parent, float(cost), edge)
        if len(self.nodes) == len(self._states):
            self._states = np.vstack([self._states, np.empty_like(self._states)])
        self._states[node.id] = node.state
        self.nodes.append(node)
        self.children[node.id] = []
        self.children[parent].append(node.id)
        return node.id

    def mark_goal(self, node_id):
        self.goal_ids.append(node_id)

    def is_ancestor(self, candidate, node_id):
        """True when `candidate` lies on the path from the root to `node_id` (inclusive)."""
        current = node_id
        while current is not None:
            if current == candidate:
                return True
            current = self.nodes[current].parent
        return False

    def descendants(self, node_id):
        """Depth-first list of every node below `node_id`."""
        out = []
        stack = list(reversed(self.children[node_id]))
        while stack:
            current = stack.pop()
            out.append(current)
            stack.extend(reversed(self.children[current]))
        return out

    def rewire(self, node_id, new_parent, edge, new_cost):
        """
        Replace the incoming edge of `node_id` and shift its subtree's costs.

        Returns:
            The cost change applied to the node and each of its descendants
        """
        if self.is_ancestor(node_id, new_parent):
            raise ContractError(f"rewiring {node_id} under {new_parent} would create a cycle")
        node = self.nodes[node_id]
        delta = float(new_cost) - node.cost
        self.children[node.parent].remove(node_id)
        self.children[new_parent].append(node_id)
        node.parent = new_parent
        node.edge = edge
        node.cost = float(new_cost)
        for child in self.descendants(node_id):
            self.nodes[child].cost += delta
        return delta

    def path_to(self, node_id):
        """Node ids from the root to `node_id`."""
        path = []
        current = node_id
        while current is not None:
            path.append(current)
            current = self.nodes[current].parent
        return path[::-1]

    def best_goal(self):
        """(node id, cost) of the cheapest goal node, or (None, inf)."""
        if not self.goal_ids:
            return None, math.inf
        best = min(self.goal_ids, key=lambda i: (self.nodes[i].cost, i))
        return best, self.nodes[best].cost

    def table(self):
        """Rows (node_id, parent_id, cost, *state) with parent -1 for the root."""
        return [
            (node.id, -1 if node.parent is None else node.parent, node.cost, *node.state)
            for node in self.nodes
        ]

    def validate(self, tolerance=1e-9, endpoint_tolerance=None):
        """
        Check the tree invariants; raise ContractError on the first violation.

        Args:
            tolerance: Allowed |cost - (parent cost + edge cost)|
            endpoint_tolerance: Allowed scaled mismatch between edge endpoints and node states
        """
        for node in self.nodes:
            if node.parent is None:
                if node.id != 0 or node.cost != 0.0:
                    raise ContractError("only the root may lack a parent, with zero cost")
                continue
            if node.id not in self.children[node.parent]:
                raise ContractError(f"node {node.id} missing from its parent's children")
            expected = self.nodes[node.parent].cost + node.edge.cost
            if abs(node.cost - expected) > tolerance * max(1.0, abs(expected)):
                raise ContractError(f"node {node.id} cost {node.cost} != {expected}")
            if endpoint_tolerance is not None:
                residual = node.edge.endpoint_residual(self.nodes[node.parent].state, node.state)
                if residual > endpoint_tolerance * (1.0 + np.max(np.abs(node.state))):
                    raise ContractError(f"edge into node {node.id} misses its endpoints by {residual:.3e}")
        for node in self.nodes:
            path = self.path_to(node.id)
            if path[0] != 0 or len(set(path)) != len(path):
                raise ContractError(f"node {node.id} is not connected to the root")
        return True


def best_solution(tree, goal=None):
    """
    Cheapest root-to-goal trajectory with times re-based to start at 0.

    Args:
        tree: PlanTree
        goal: Optional GoalRegion; when given, membership is re-evaluated over all nodes

    Returns:
        TrajectorySegment or None
    """
    if goal is None:
        node_id, _ = tree.best_goal()
    else:
        members = [node.id for node in tree.nodes if goal.contains(node.state)]
        node_id = min(members, key=lambda i: (tree.nodes[i].cost, i)) if members else None
    if node_id is None:
        return None
    path = tree.path_to(node_id)
    if len(path) == 1:
        x = tree.root.state
        return TrajectorySegment(np.zeros(1), x[None, :], np.zeros((1, tree.control_dim)), None, 0.0, 0.0)
    return concatenate_segments([tree.nodes[i].edge for i in path[1:]])
