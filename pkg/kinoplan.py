"""
Kinodynamic Planning Application

Plans optimal trajectories for nonlinear systems with RRT*, using the
affine-quadratic pseudo-metric to pick neighbours and iterative TPBVP solvers
to connect them.

Usage:
    python kinoplan.py plan --scenario scenarios/double_integrator.scn --seed 7 --nodes 2000
    python kinoplan.py batch --scenario scenarios/diffdrive_cluttered25.scn --trials 20 --checkpoints 500,1000,3000,5000
    python kinoplan.py rollout --scenario scenarios/pendulum_swingup.scn --trajectory runs/pendulum/trajectory.csv
    python kinoplan.py verify metric

Exit codes: 0 success, 1 usage, parse or run error, 2 no feasible solution or a failed verify suite.
"""

import argparse
import os
import sys

from src.utils.logger import configure_logging, get_logger

logger = get_logger(__name__)

from src.experiments.rollout import cmd_rollout
from src.experiments.runner import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, cmd_batch, cmd_plan
from src.experiments.verify import SUITES, run_suite
from src.loader import load_config, load_scenario
from src.tpbvp import SOLVERS
from src.utils.errors import ContractError, KinoplanError, ScenarioError


class ArgumentParser(argparse.ArgumentParser):
    """argparse whose usage errors exit with EXIT_USAGE."""
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_counts(text):
    """'500,1000,3000' -> [500, 1000, 3000]."""
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError("node counts must be positive")
    return counts


def build_parser():
    parser = ArgumentParser(description="Kinodynamic RRT* planning with affine-quadratic steering.")
    parser.add_argument("--verbose", action="store_true", help="Log per-edge solver details")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def scenario_args(sub):
        sub.add_argument("--scenario", required=True, help="Scenario file")
        sub.add_argument("--seed", type=int, help="Sampler seed (batch: base seed)")
        sub.add_argument("--solver", choices=sorted(SOLVERS), help="Edge solver")
        sub.add_argument("--out", help="Output directory (default runs/<scenario name>)")

    plan = commands.add_parser("plan", help="Plan once and write trajectory, tree and summary")
    scenario_args(plan)
    plan.add_argument("--nodes", type=int, help="Node budget")
    plan.add_argument("--snapshots", type=parse_counts, help="Node counts at which to save the tree, e.g. 200,500")

    batch = commands.add_parser("batch", help="Seeded Monte-Carlo trials with a checkpoint report")
    scenario_args(batch)
    batch.add_argument("--trials", type=int, help="Number of trials K")
    batch.add_argument("--checkpoints", type=parse_counts, help="Node counts, e.g. 500,1000,3000,5000")

    rollout = commands.add_parser("rollout", help="Replay a planned trajectory open loop")
    rollout.add_argument("--scenario", required=True, help="Scenario the trajectory was planned for")
    rollout.add_argument("--trajectory", required=True, help="trajectory.csv written by plan")
    rollout.add_argument("--out", help="Output directory (default: next to the trajectory)")

    verify = commands.add_parser("verify", help="Run an invariant suite")
    verify.add_argument("suite", choices=sorted(SUITES))
    verify.add_argument("--seed", type=int, default=0, help="Seed of the random instances")
    verify.add_argument("--trials", type=int, help="Random instances per check")
    return parser


def default_out(config, scenario_path):
    name = os.path.splitext(os.path.basename(scenario_path))[0]
    return os.path.join(config["output"]["directory"], name)


def main(argv=None):
    """Main entry point for the application."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    config = load_config()

    try:
        if args.command == "verify":
            passed, _ = run_suite(args.suite, seed=args.seed, trials=args.trials)
            return EXIT_OK if passed else EXIT_INFEASIBLE

        scenario = load_scenario(args.scenario, config)
        if args.command == "rollout":
            out_dir = args.out or os.path.dirname(os.path.abspath(args.trajectory))
            cmd_rollout(scenario, args.trajectory, out_dir)
            return EXIT_OK

        out_dir = args.out or default_out(config, args.scenario)
        if args.command == "plan":
            scenario = scenario.with_overrides(nodes=args.nodes, seed=args.seed, solver=args.solver,
                                               snapshots=args.snapshots)
            return cmd_plan(scenario, out_dir)

        scenario = scenario.with_overrides(seed=args.seed, solver=args.solver)
        trials = args.trials if args.trials is not None else config["batch"]["trials"]
        checkpoints = args.checkpoints or config["batch"]["checkpoints"]
        cmd_batch(scenario, trials, checkpoints, out_dir)
        return EXIT_OK

    except ScenarioError as e:
        logger.error(0, f"Invalid scenario: {e}")
        return EXIT_USAGE
    except ContractError as e:
        logger.error(0, f"Invalid input: {e}")
        return EXIT_USAGE
    except KinoplanError as e:
        logger.error(0, f"Run failed: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
