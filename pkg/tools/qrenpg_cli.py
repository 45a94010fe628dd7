#!/usr/bin/env python3
"""
qrenpg: Command Line
Subcommands generate, run, run-markov, verify and plot. Results are printed to
stdout as JSON; logs go to stderr.

Exit codes: 0 success, 1 usage/config/IO error, 2 numeric failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from qrenpg_errors import QrenpgError
from qrenpg_experiment import (
    apply_overrides,
    cmd_generate,
    cmd_plot,
    cmd_run,
    cmd_run_markov,
    load_config,
)
from qrenpg_generators import KINDS
from qrenpg_verify import DEFAULT_SEED_COUNT, SUITES, cmd_verify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_VERIFY = 3

LOG_FORMAT = "[%(levelname)s][%(name)s][%(asctime)s] %(message)s"


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that exits with EXIT_USAGE instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def exit_code(result: dict) -> int:
    if result.get("success"):
        return EXIT_OK
    return {"numeric": EXIT_NUMERIC, "verification": EXIT_VERIFY}.get(result.get("error_type"), EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _edge_list(text: str) -> list[list[int]]:
    try:
        return [[int(v) for v in pair.split("-")] for pair in text.split(",") if pair.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected edges like 0-1,1-2, got {text!r}")


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="Experiment config (YAML)")
    parser.add_argument("--out", help="Output directory (overrides config and $QRENPG_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="Game seed (overrides config)")
    parser.add_argument("--tau", help="Comma-separated tau values (overrides config)")
    parser.add_argument("--eta", help="Learning rate or 'auto' (overrides config)")
    parser.add_argument("--iters", type=int, help="Maximum iterations (overrides config)")
    parser.add_argument("--svg", action="store_true", help="Also write SVG gap plots")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="qrenpg", description="Entropy-regularized independent NPG experiments")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="Generate a game and write it as a game file")
    generate.add_argument("--out", required=True, help="Game file to write")
    generate.add_argument("--config", help="Take the game spec from this config")
    generate.add_argument("--kind", choices=KINDS, help="Game family")
    generate.add_argument("--sizes", type=_int_list, help="Action sizes, e.g. 3,4,5")
    generate.add_argument("--states", type=int, help="Number of states (random_markov)")
    generate.add_argument("--edges", type=_edge_list, help="Edges, e.g. 0-1,1-2 (polymatrix; default ring)")
    generate.add_argument("--edge-range", type=float, help="Edge matrix entries in [-r, r) (polymatrix)")
    generate.add_argument("--gamma", type=float, help="Discount factor (random_markov)")
    generate.add_argument("--seed", type=int, help="Game seed")

    _add_override_flags(sub.add_parser("run", help="Static-game tau sweep"))
    _add_override_flags(sub.add_parser("run-markov", help="Markov-game tau sweep"))

    verify = sub.add_parser("verify", help="Run the property suites")
    verify.add_argument("--seeds", type=int, default=DEFAULT_SEED_COUNT, help="Instances per suite")
    verify.add_argument("--base-seed", type=int, default=0, help="First seed")
    verify.add_argument("--suite", action="append", choices=sorted(SUITES), help="Run only this suite (repeatable)")
    verify.add_argument("--workers", type=int, default=None, help="Worker processes (default: one per CPU)")

    plot = sub.add_parser("plot", help="Re-render an SVG from trace CSVs")
    plot.add_argument("traces", nargs="+", help="Trace CSV files")
    plot.add_argument("--out", required=True, help="SVG file to write")
    plot.add_argument("--column", default="qre_gap", help="Column to plot (default: qre_gap)")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _generate(args) -> dict:
    if args.config:
        try:
            config = apply_overrides(load_config(args.config), seed=args.seed)
        except QrenpgError as e:
            return {"success": False, "error": str(e), "error_type": e.kind}
        if config.game_spec is None:
            return {"success": False, "error": "config refers to a game file, not a spec", "error_type": "config"}
        return cmd_generate(config.game_spec, args.out)
    if not args.kind or not args.sizes:
        return {"success": False, "error": "generate needs --config or both --kind and --sizes",
                "error_type": "config"}
    spec = {"kind": args.kind, "action_sizes": args.sizes}
    for key, value in (("seed", args.seed), ("num_states", args.states), ("edges", args.edges),
                       ("edge_range", args.edge_range), ("gamma", args.gamma)):
        if value is not None:
            spec[key] = value
    return cmd_generate(spec, args.out)


def _experiment(args, command) -> dict:
    try:
        config = apply_overrides(load_config(args.config), out=args.out, seed=args.seed, tau=args.tau,
                                 eta=args.eta, iters=args.iters, svg=args.svg)
    except QrenpgError as e:
        return {"success": False, "error": str(e), "error_type": e.kind}
    return command(config)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    if args.command == "generate":
        result = _generate(args)
    elif args.command == "run":
        result = _experiment(args, cmd_run)
    elif args.command == "run-markov":
        result = _experiment(args, cmd_run_markov)
    elif args.command == "verify":
        result = cmd_verify(args.seeds, args.suite, args.base_seed, args.workers)
    else:
        result = cmd_plot(args.traces, args.out, args.column)

    if not result.get("success"):
        logger.error("%s failed: %s", args.command, result.get("error"))
    print(json.dumps(result, indent=2))
    return exit_code(result)


if __name__ == "__main__":
    sys.exit(main())
