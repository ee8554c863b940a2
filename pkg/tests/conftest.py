"""
Shared fixtures: small bases and base flows, built once per session.
"""

import numpy as np
import pytest

from falling_sphere.baseflow import BaseFlowSolver
from falling_sphere.config import Resolution, RunConfig
from falling_sphere.geometry import build_basis


SMALL_L = 2
SMALL_N = 4


@pytest.fixture(scope="session")
def basis0():
    """Reflection-even m = 0 basis (translational lift first)."""
    return build_basis(0, SMALL_L, SMALL_N, sector="even")


@pytest.fixture(scope="session")
def basis1():
    """Reflection-even m = 1 basis (e3 rotational lift first)."""
    return build_basis(1, SMALL_L, SMALL_N, sector="even")


@pytest.fixture(scope="session")
def solver(basis0):
    return BaseFlowSolver(basis0)


@pytest.fixture(scope="session")
def base_flow(solver):
    return solver.solve(0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def small_config(tmp_path):
    """Fast configuration writing into a temporary directory."""
    return RunConfig(
        resolution=Resolution(SMALL_L, SMALL_N),
        output_dir=str(tmp_path / "out"),
        log_level="WARNING",
    )
