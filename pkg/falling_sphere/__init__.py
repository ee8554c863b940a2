"""
Falling Sphere - Steady bifurcation analysis of a sphere falling in a liquid.

This package computes the axisymmetric free fall of a rigid sphere in a
Navier-Stokes liquid, the spectrum of its linearization per azimuthal mode,
and the critical Galilei number at which a steady non-axisymmetric state
bifurcates.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config, save_config
from .core import FallingSphereSuite
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    EigenSolverError,
    FallingSphereError,
    FingerprintMismatchError,
    ValidationError,
)

__all__ = [
    "FallingSphereSuite",
    "RunConfig",
    "load_config",
    "save_config",
    "FallingSphereError",
    "ConfigurationError",
    "ConvergenceError",
    "EigenSolverError",
    "FingerprintMismatchError",
    "ValidationError",
]
