"""
Command-line interface for falling-sphere.
"""

import argparse
import json
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional

from . import __version__
from .bifurcation import STATUS_NOT_SIMPLE, STATUS_NOT_TRANSVERSAL
from .config import LOG_LEVELS, RunConfig, load_config
from .core import FallingSphereSuite, describe_flow
from .exceptions import FallingSphereError, FingerprintMismatchError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CERTIFIED = 3


def _print_table(rows: List[Dict[str, Any]], columns: List[str]) -> None:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows else len(c) for c in columns}
    print("  ".join(c.ljust(widths[c]) for c in columns))
    print("  ".join("-" * widths[c] for c in columns))
    for r in rows:
        print("  ".join(str(r[c]).ljust(widths[c]) for c in columns))


def cmd_verify(config: RunConfig) -> int:
    """Run the identity suite and print a pass/fail table."""
    with FallingSphereSuite(config) as suite:
        report = suite.verify()
    rows = [
        {
            "identity": c.name,
            "measured": c.measured,
            "residual": f"{c.residual:.3e}",
            "tolerance": f"{c.tolerance:.1e}",
            "result": "PASS" if c.passed else "FAIL",
        }
        for c in report.checks
    ]
    _print_table(rows, ["identity", "measured", "residual", "tolerance", "result"])
    if report.constants:
        print("constants: " + ", ".join(f"{k}={v:.6g}" for k, v in sorted(report.constants.items())))
    if report.underresolved:
        print("Quadrature underresolved: identities were not judged.", file=sys.stderr)
    for c in report.failures:
        print(f"FAILED: {c.name} (residual {c.residual:.3e} > {c.tolerance:.1e})", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_ERROR


def cmd_base(config: RunConfig) -> int:
    """Compute or resume the base branch."""
    with FallingSphereSuite(config) as suite:
        branch = suite.base()
    _print_table(
        [{k: f"{v:.10g}" for k, v in describe_flow(p).items()} for p in branch.points],
        ["lam", "xi0", "energy", "residual", "iterations"],
    )
    for message in branch.diagnostics:
        print(f"note: {message}")
    return EXIT_OK


def cmd_spectrum(config: RunConfig) -> int:
    """Export eigenvalue scans of the configured modes."""
    with FallingSphereSuite(config) as suite:
        scans = suite.spectrum()
    for m, scan in scans.items():
        lo, hi = scan.extrema()
        print(f"mode {m}: {len(scan.points)} points, Re mu in [{lo:.10g}, {hi:.10g}], "
              f"{len(scan.path_breaks)} path breaks")
    return EXIT_OK


def cmd_critical(config: RunConfig, m: int) -> int:
    """
    Locate the critical Galilei number of mode ``m``.

    Returns 3 when a crossing is found whose eigenvalue is not certified
    simple or does not cross transversally.
    """
    with FallingSphereSuite(config) as suite:
        report = suite.critical(m)
    print(json.dumps(
        {
            "m": report.m,
            "status": report.status,
            "lambda0": report.lambda0,
            "mu_prime": report.mu_prime,
            "sb_functional": report.sb_functional,
            "notes": report.notes,
        },
        indent=2,
    ))
    if report.status in (STATUS_NOT_SIMPLE, STATUS_NOT_TRANSVERSAL):
        return EXIT_NOT_CERTIFIED
    return EXIT_OK


def cmd_symmetry(config: RunConfig, m: int) -> int:
    """Re-evaluate the symmetry-breaking functional of a stored report."""
    with FallingSphereSuite(config) as suite:
        result = suite.symmetry(m)
    print(json.dumps(
        {
            "functional": result.functional,
            "omega_e3": result.omega_e3,
            "torque_route": result.expected,
            "consistency": result.consistency,
            "flagged": result.flagged,
        },
        indent=2,
    ))
    return EXIT_ERROR if result.flagged else EXIT_OK


def build_config(args: argparse.Namespace) -> RunConfig:
    """Configuration file plus command-line overrides."""
    config = load_config(args.config) if args.config else RunConfig()
    changes: Dict[str, Any] = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.lambda_min is not None:
        changes["lambda_min"] = args.lambda_min
    if args.lambda_max is not None:
        changes["lambda_max"] = args.lambda_max
    if args.log_level is not None:
        changes["log_level"] = args.log_level
    if args.manufactured:
        changes["manufactured"] = replace(config.manufactured, enabled=True)
    if args.mode is not None and args.command == "spectrum":
        changes["modes"] = (args.mode,)
    return config.replace(**changes) if changes else config


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Path to the JSON run configuration")
    common.add_argument("--mode", type=int, help="Azimuthal mode")
    common.add_argument("--lambda-min", type=float, help="Smallest Galilei number")
    common.add_argument("--lambda-max", type=float, help="Largest Galilei number")
    common.add_argument("--out", type=str, help="Output directory")
    common.add_argument(
        "--manufactured",
        action="store_true",
        help="Use the closed-form operator family instead of the base flow",
    )
    common.add_argument("--log-level", choices=LOG_LEVELS, help="Set the logging level")

    parser = argparse.ArgumentParser(
        prog="falling-sphere",
        description="Steady bifurcation analysis of a sphere falling in a viscous liquid",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"falling-sphere {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify", parents=[common], help="Run the identity suite")
    sub.add_parser("base", parents=[common], help="Compute or resume the base branch")
    sub.add_parser("spectrum", parents=[common], help="Export eigenvalue scans")
    sub.add_parser("critical", parents=[common], help="Locate the critical Galilei number")
    sub.add_parser("symmetry", parents=[common], help="Evaluate the symmetry-breaking functional")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    args = make_parser().parse_args(argv)
    try:
        config = build_config(args)
        if args.command == "verify":
            return cmd_verify(config)
        if args.command == "base":
            return cmd_base(config)
        if args.command == "spectrum":
            return cmd_spectrum(config)
        if args.command == "critical":
            return cmd_critical(config, args.mode if args.mode is not None else 1)
        return cmd_symmetry(config, args.mode if args.mode is not None else 1)
    except FingerprintMismatchError as e:
        print(f"Error: {e}", file=sys.stderr)
        for line in e.differences:
            print(f"  {line}", file=sys.stderr)
        return EXIT_ERROR
    except FallingSphereError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("\nShutting down...")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
