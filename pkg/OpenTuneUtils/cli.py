import argparse
import sys
from typing import List, Optional

from .DynamicsUtils import FlowDivergenceError
from .EnsembleUtils import DatasetGenerationError
from .ExperimentUtils import CheckpointMismatchError, ConfigError, ExperimentConfig, ExperimentRunner
from .OptimizeUtils import ConvergenceError, DriftBudgetError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NOT_CONVERGED = 4
EXIT_DIVERGED = 5

COMMANDS = ("gen-data", "train", "tune", "penalty", "eval", "scaling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opentune", description="Tuning without forgetting experiment harness")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        subparser = subparsers.add_parser(command)
        subparser.add_argument('--config', type=str, help='Experiment config file (INI sections, key = value)')
        subparser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                               help='Override one config entry, may be repeated')
        subparser.add_argument('--out', type=str, help='Output directory (overrides output.dir)')
        subparser.add_argument('--quiet', action='store_true', help='Only print errors and evaluation metrics')
        if command in ("tune", "penalty", "eval"):
            subparser.add_argument('--control', type=str, help='Control checkpoint to start from / evaluate')
        if command == "eval":
            subparser.add_argument('--dataset', type=str, help='Dataset file (defaults to the run dataset)')
    return parser


def run(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.dir={args.out}")
    if args.quiet:
        overrides.append("output.verbose=false")
    config = ExperimentConfig.from_file(args.config, overrides)
    runner = ExperimentRunner(config)
    if args.command == "gen-data":
        result = runner.gen_data()
    elif args.command == "train":
        result = runner.train()
    elif args.command == "tune":
        result = runner.tune(args.control)
    elif args.command == "penalty":
        result = runner.penalty(args.control)
    elif args.command == "eval":
        result = runner.evaluate(args.control, args.dataset)
    else:
        result = runner.scaling()
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def main(argv: Optional[List[str]] = None) -> int:
    """命令行入口, 返回进程退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_OK if error.code == 0 else EXIT_CONFIG
    try:
        return run(args)
    except (ConfigError, CheckpointMismatchError, DatasetGenerationError) as error:
        print(f"config error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as error:
        print(f"I/O error: {error}", file=sys.stderr)
        return EXIT_IO
    except (ConvergenceError, DriftBudgetError) as error:
        print(f"not converged: {error}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except FlowDivergenceError as error:
        print(f"flow diverged: {error}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as error:
        # 文件内容格式错误
        print(f"I/O error: {error}", file=sys.stderr)
        return EXIT_IO
