"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 failed cross-check, 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import CrossCheckFailure, InvalidParameters, NetworkError, ScenarioError
from .io import FIGURES, Scenario, dumps_report, load_scenario, run_figure, run_scenario, shipped_scenarios
from .protocol import METHODS

EXIT_OK, EXIT_INVALID, EXIT_CROSSCHECK, EXIT_IO = 0, 1, 2, 3


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpentangle",
        description="Counting statistics and heralding analysis for fluorescence entanglement.",
        epilog=f"shipped scenarios: {', '.join(shipped_scenarios())}",
    )
    parser.add_argument("--scenario", help="scenario file (TOML or JSON) or a shipped scenario name")
    parser.add_argument("--figure", choices=FIGURES, help="write one figure table instead of the report")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=_u64, help="trajectory seed")
    parser.add_argument("--n-traj", type=_nonneg, help="trajectories per branch for oracle validation")
    parser.add_argument("--method", choices=METHODS, help="classification method")
    parser.add_argument("--kappa", type=float, help="eta * t / T1 at the heralding time")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario) if args.scenario else Scenario()
        out = args.out or scenario.out_dir
        if args.figure:
            path = run_figure(args.figure, scenario, out or ".")
            print(path)
            return EXIT_OK
        try:
            report = run_scenario(scenario, args.n_traj, args.seed, args.method, args.kappa)
            code = EXIT_OK
        except CrossCheckFailure as exc:
            report = exc.diff["report"]
            print(f"cross-check failure: {exc}", file=sys.stderr)
            code = EXIT_CROSSCHECK
        text = dumps_report(report)
        if out:
            from .io import atomic_write

            path = atomic_write(Path(out) / f"{scenario.name}_report.json", text)
            print(path)
        else:
            sys.stdout.write(text)
        return code
    except (ScenarioError, InvalidParameters, NetworkError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
