"""
Kinodynamic RRT* planner.
"""

from .tree import PlanNode, PlanTree, best_solution
from .rrt_star import (
    PlanResult,
    PlannerConfig,
    RRTStarPlanner,
    SolverStatistics,
    connection_radius,
    plan,
)
