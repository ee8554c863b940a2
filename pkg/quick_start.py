#!/usr/bin/env python3
"""
Quick start script for falling-sphere package.

Runs the closed-form self-test end to end: the manufactured operator family
must cross mu = 1 at lam0 = sqrt(lambda_star) with mu'(lam0) = 1.
"""

import sys

from falling_sphere import FallingSphereError, FallingSphereSuite, RunConfig


def main() -> int:
    """Locate the manufactured crossing and print the report summary."""
    print("Falling Sphere - Quick Start")
    print("=" * 35)

    config = RunConfig.from_dict(
        {
            "resolution": {"L": 1, "N": 2},
            "modes": [1],
            "lambda_min": 0.0,
            "lambda_max": 4.0,
            "manufactured": {"enabled": True, "lambda_star": 4.0},
            "eigen": {"count": 8, "method": "dense"},
            "output_dir": "falling_sphere_out/quick_start",
            "log_level": "WARNING",
        }
    )
    try:
        with FallingSphereSuite(config) as suite:
            report = suite.critical(1)
    except FallingSphereError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print(f"status:    {report.status}")
    print(f"lambda0:   {report.lambda0!r} (expected 2.0)")
    print(f"mu'(lam0): {report.mu_prime!r} (expected 1.0)")
    for note in report.notes:
        print(f"note:      {note}")
    print(f"\nResults written to {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
