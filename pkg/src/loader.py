"""
Configuration loading: JSON defaults and the scenario file format.

A scenario is a plain-text file of bracketed sections holding `key = value`
lines; `#` starts a comment. Numbers may be simple expressions using `pi`
(e.g. `pi/4`, `-0.5*pi`); lists are comma separated. The `[obstacles]`
section also accepts one primitive per line:

    box x0 x1 y0 y1 [z0 z1]
    circle cx cy r
    map = cluttered25

Every error is reported with the offending line number.
"""

import ast
import hashlib
import json
import math
import operator
import os
from dataclasses import dataclass, field, replace

import numpy as np

from src.dynamics import CostWeights, build_system
from src.numeric import IntegratorConfig
from src.planner import PlannerConfig
from src.tpbvp import SolverConfig
from src.utils.errors import ContractError, ScenarioError
from src.world import Box, Circle, GoalRegion, ObstacleSet, SamplerConfig, World, named_map

DEFAULTS_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "defaults.json")

SECTIONS = ("system", "cost", "init", "goal", "sampling", "obstacles", "planner", "solver")

_OPERATORS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}
_NAMES = {"pi": math.pi, "inf": math.inf}


def load_config(config_path=DEFAULTS_PATH):
    with open(config_path, "r") as f:
        return json.load(f)


def _evaluate(node):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPERATORS:
        return _OPERATORS[type(node.op)](_evaluate(node.operand))
    if isinstance(node, ast.BinOp) and type(node.op) in _OPERATORS:
        return _OPERATORS[type(node.op)](_evaluate(node.left), _evaluate(node.right))
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_evaluate(e) for e in node.elts]
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "diag":
        return np.diag([_evaluate(a) for a in node.args])
    raise ValueError("unsupported expression")


def parse_number(text):
    """Evaluate a numeric expression such as `0.05`, `pi/2` or `diag(1, 1, 0.5)`."""
    try:
        return _evaluate(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, TypeError) as e:
        raise ValueError(f"cannot evaluate '{text.strip()}'") from e


def parse_vector(text):
    """`1, pi/4, 0` or `[1, pi/4, 0]` as a flat float array."""
    value = parse_number(text) if text.strip().startswith("[") else [parse_number(p) for p in _split(text)]
    return np.asarray(value, dtype=float).ravel()


def _split(text):
    """Split on commas that are not nested inside brackets or parentheses."""
    parts, depth, current = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return [p for p in parts if p.strip()]


@dataclass
class Entry:
    value: str
    line: int


@dataclass
class Scenario:
    """
    A validated planning problem.

    Args:
        path: Source file
        digest: SHA-256 of the file bytes
        model: SystemModel
        weights: CostWeights
        x_init: Initial state
        goal: GoalRegion
        obstacles: ObstacleSet
        resolution: Collision resolution ds
        planner: PlannerConfig (carries the sampler and solver configs)
    """
    path: str
    digest: str
    system_name: str
    model: object
    weights: CostWeights
    x_init: np.ndarray
    goal: GoalRegion
    obstacles: ObstacleSet
    resolution: float
    planner: PlannerConfig
    system_parameters: dict = field(default_factory=dict)

    def world(self):
        return World(self.model, self.obstacles, self.goal, self.resolution)

    def with_overrides(self, nodes=None, seed=None, solver=None, snapshots=None):
        """Copy with CLI overrides applied to the planner configuration."""
        planner = self.planner
        if seed is not None:
            planner = replace(planner, sampler=replace(planner.sampler, seed=int(seed)))
        changes = {}
        if nodes is not None:
            changes["max_nodes"] = int(nodes)
            changes["max_iterations"] = None
        if solver is not None:
            changes["solver"] = solver
        if snapshots is not None:
            changes["snapshots"] = tuple(snapshots)
        if changes:
            planner = replace(planner, **changes)
        return replace(self, planner=planner)


def read_sections(path):
    """
    Split a scenario file into sections.

    Returns:
        (dict section -> dict key -> Entry, list of (line, primitive text) obstacle lines)
    """
    sections = {name: {} for name in SECTIONS}
    primitives = []
    current = None
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                if current not in sections:
                    raise ScenarioError(f"unknown section [{current}]", number, path)
                continue
            if current is None:
                raise ScenarioError("entry outside of a section", number, path)
            if current == "obstacles" and "=" not in line:
                primitives.append((number, line))
                continue
            if "=" not in line:
                raise ScenarioError(f"expected 'key = value', got '{line}'", number, path)
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ScenarioError("empty key or value", number, path)
            if key in sections[current]:
                raise ScenarioError(f"duplicate key '{key}' in [{current}]", number, path)
            sections[current][key] = Entry(value, number)
    return sections, primitives


class _SectionReader:
    """Typed access to one section with line-anchored errors."""
    def __init__(self, name, entries, path):
        self.name = name
        self.entries = entries
        self.path = path
        self.used = set()

    def _get(self, key):
        self.used.add(key)
        return self.entries.get(key)

    def error(self, message, key=None):
        entry = self.entries.get(key) if key else None
        return ScenarioError(message, entry.line if entry else None, self.path)

    def number(self, key, default=None, cast=float):
        entry = self._get(key)
        if entry is None:
            if default is None:
                raise ScenarioError(f"[{self.name}] missing '{key}'", None, self.path)
            return default
        try:
            value = parse_number(entry.value)
            return cast(value)
        except (ValueError, TypeError) as e:
            raise ScenarioError(f"[{self.name}] {key}: {e}", entry.line, self.path) from e

    def vector(self, key, required=True):
        entry = self._get(key)
        if entry is None:
            if required:
                raise ScenarioError(f"[{self.name}] missing '{key}'", None, self.path)
            return None
        try:
            return parse_vector(entry.value)
        except ValueError as e:
            raise ScenarioError(f"[{self.name}] {key}: {e}", entry.line, self.path) from e

    def text(self, key, default=None):
        entry = self._get(key)
        if entry is None:
            if default is None:
                raise ScenarioError(f"[{self.name}] missing '{key}'", None, self.path)
            return default
        return entry.value

    def unused(self):
        return [k for k in self.entries if k not in self.used]

    def check_unused(self):
        for key in self.unused():
            raise ScenarioError(f"[{self.name}] unknown key '{key}'", self.entries[key].line, self.path)


def _system(reader, defaults):
    name = reader.text("name")
    parameters = dict(defaults.get("systems", {}).get(name, {}))
    for key in reader.unused():
        entry = reader.entries[key]
        reader.used.add(key)
        try:
            value = parse_number(entry.value)
        except ValueError as e:
            raise ScenarioError(f"[system] {key}: {e}", entry.line, reader.path) from e
        parameters[key] = np.asarray(value, dtype=float) if isinstance(value, (list, np.ndarray)) else value
    try:
        model = build_system(name, parameters)
    except ContractError as e:
        raise ScenarioError(f"[system] {e}", reader.entries["name"].line, reader.path) from e
    return name, model, parameters


def _weights(reader, model):
    entry = reader.entries.get("R")
    R = np.asarray(reader.number("R", default=1.0, cast=lambda v: np.asarray(v, dtype=float)), dtype=float)
    scale = reader.number("scale", default=1.0)
    if R.ndim == 0:
        R = float(R) * np.eye(model.m)
    elif R.ndim == 1:
        R = np.diag(R)
    if R.shape != (model.m, model.m):
        raise ScenarioError(f"[cost] R must be {model.m}x{model.m}, got {R.shape}",
                            entry.line if entry else None, reader.path)
    try:
        return CostWeights(scale * R)
    except ContractError as e:
        raise ScenarioError(f"[cost] {e}", entry.line if entry else None, reader.path) from e


def _obstacles(sections, primitives, path):
    reader = _SectionReader("obstacles", sections["obstacles"], path)
    items = []
    map_name = reader.text("map", default="none")
    if map_name != "none":
        try:
            items.extend(named_map(map_name))
        except ContractError as e:
            raise ScenarioError(str(e), reader.entries["map"].line, path) from e
    resolution = reader.number("resolution", default=0.0)
    reader.check_unused()
    for number, line in primitives:
        kind, *args = line.split()
        try:
            values = [float(parse_number(a)) for a in args]
            if kind == "box" and len(values) in (4, 6):
                items.append(Box(*values))
            elif kind == "circle" and len(values) == 3:
                items.append(Circle(*values))
            else:
                raise ValueError(f"malformed primitive '{line}'")
        except (ValueError, TypeError, ContractError) as e:
            raise ScenarioError(str(e), number, path) from e
    return ObstacleSet(tuple(items)), resolution or None


def _dimension(vector, n, section, key, reader):
    if vector.shape != (n,):
        raise reader.error(f"[{section}] {key} has {vector.size} entries, system state has {n}", key)


def load_scenario(path, defaults=None):
    """
    Parse and validate a scenario file.

    Args:
        path: Scenario file path
        defaults: Parsed defaults (loaded from config/defaults.json when None)

    Returns:
        Scenario

    Raises:
        ScenarioError: with the line number of the first problem found
    """
    defaults = defaults if defaults is not None else load_config()
    try:
        with open(path, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e}", None, path) from e
    sections, primitives = read_sections(path)
    readers = {name: _SectionReader(name, entries, path) for name, entries in sections.items()}

    system_name, model, parameters = _system(readers["system"], defaults)
    n = model.n
    weights = _weights(readers["cost"], model)
    readers["cost"].check_unused()

    x_init = readers["init"].vector("x")
    _dimension(x_init, n, "init", "x", readers["init"])
    readers["init"].check_unused()

    goal_reader = readers["goal"]
    g_lo, g_hi = goal_reader.vector("lower"), goal_reader.vector("upper")
    _dimension(g_lo, n, "goal", "lower", goal_reader)
    _dimension(g_hi, n, "goal", "upper", goal_reader)
    if np.any(g_lo > g_hi):
        raise goal_reader.error("[goal] lower exceeds upper", "lower")
    goal = GoalRegion(g_lo, g_hi, tuple(model.angle_coordinates))
    goal_reader.check_unused()

    sampling = readers["sampling"]
    s_lo, s_hi = sampling.vector("lower"), sampling.vector("upper")
    _dimension(s_lo, n, "sampling", "lower", sampling)
    _dimension(s_hi, n, "sampling", "upper", sampling)
    if np.any(s_hi <= s_lo) or not (np.all(np.isfinite(s_lo)) and np.all(np.isfinite(s_hi))):
        raise sampling.error("[sampling] sampling box is empty or unbounded", "lower")
    linear = [k for k in range(n) if k not in model.angle_coordinates]
    if any(g_hi[k] < s_lo[k] or g_lo[k] > s_hi[k] for k in linear):
        raise goal_reader.error("[goal] goal region lies outside the sampling box", "lower")
    goal_bias = sampling.number("goal_bias", default=defaults["sampler"]["goal_bias"])
    sampling.check_unused()

    obstacles, resolution = _obstacles(sections, primitives, path)
    resolution = resolution or defaults["world"]["resolution"]

    solver_reader = readers["solver"]
    sd = defaults["solver"]
    integrator = IntegratorConfig(dt=solver_reader.number("dt", default=defaults["integrator"]["dt"]))
    try:
        solver_cfg = SolverConfig(
            max_iters=solver_reader.number("max_iters", default=sd["max_iters"], cast=int),
            boundary_tol=solver_reader.number("boundary_tol", default=sd["boundary_tol"]),
            hamiltonian_tol=solver_reader.number("hamiltonian_tol", default=sd["hamiltonian_tol"]),
            step_size=solver_reader.number("step_size", default=sd["step_size"]),
            newton_damping=solver_reader.number("newton_damping", default=sd["newton_damping"]),
            max_halvings=solver_reader.number("max_halvings", default=sd["max_halvings"], cast=int),
            tau_max=solver_reader.number("tau_max", default=sd["tau_max"]),
            integrator=integrator,
        )
    except ContractError as e:
        raise ScenarioError(f"[solver] {e}", None, path) from e
    solver_reader.check_unused()

    pr = readers["planner"]
    pd = defaults["planner"]
    u_max = pr.vector("u_max", required=False)
    if u_max is not None and u_max.shape != (model.m,):
        raise pr.error(f"[planner] u_max needs {model.m} entries", "u_max")
    try:
        sampler_cfg = SamplerConfig(s_lo, s_hi, goal_bias, pr.number("seed", default=pd["seed"], cast=int))
        planner = PlannerConfig(
            sampler=sampler_cfg,
            max_nodes=pr.number("nodes", default=pd["nodes"], cast=int),
            max_iterations=pr.number("max_iterations", default=0, cast=int) or None,
            eta=pr.number("eta", default=pd["eta"]),
            gamma_rrt=pr.number("gamma", default=pd["gamma"]),
            solver=pr.text("solver", default=pd["solver"]),
            solver_config=solver_cfg,
            log_every=pr.number("log_every", default=pd["log_every"], cast=int),
            u_max=None if u_max is None else tuple(u_max),
        )
    except ContractError as e:
        raise ScenarioError(f"[planner] {e}", None, path) from e
    pr.check_unused()

    return Scenario(
        path=str(path),
        digest=digest,
        system_name=system_name,
        model=model,
        weights=weights,
        x_init=x_init,
        goal=goal,
        obstacles=obstacles,
        resolution=float(resolution),
        planner=planner,
        system_parameters={k: v for k, v in parameters.items() if np.ndim(v) == 0},
    )
