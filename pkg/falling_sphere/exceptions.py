"""
Custom exceptions for the falling-sphere package.
"""

from typing import Any, List, Optional, Sequence


class FallingSphereError(Exception):
    """Base exception for all falling-sphere errors."""
    pass


class ConfigurationError(FallingSphereError):
    """Raised when a run configuration is invalid."""
    pass


class ValidationError(FallingSphereError):
    """Raised when input validation fails."""
    pass


class ModeCouplingError(ValidationError):
    """Raised when azimuthal wavenumbers violate the Fourier selection rule."""
    pass


class QuadratureError(FallingSphereError):
    """Raised when a quadrature rule is too coarse for the integrands it meets."""

    def __init__(self, message: str, disagreement: float = float("nan")):
        super().__init__(message)
        self.disagreement = disagreement


class FingerprintMismatchError(FallingSphereError):
    """Raised when basis or configuration fingerprints disagree."""

    def __init__(self, message: str, differences: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.differences: List[str] = list(differences or [])


class ConvergenceError(FallingSphereError):
    """
    Raised when a Newton iteration fails to converge.

    Carries the last iterate and the residual history so that callers
    can inspect how the iteration went wrong.
    """

    def __init__(
        self,
        message: str,
        last_iterate: Any = None,
        residual_history: Optional[Sequence[float]] = None,
    ):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_history: List[float] = list(residual_history or [])


class SingularJacobianError(ConvergenceError):
    """Raised when the Newton Jacobian is singular (fold of the branch)."""
    pass


class EigenSolverError(FallingSphereError):
    """Raised when the shift-invert eigen iteration does not converge."""

    def __init__(self, message: str, residual_history: Optional[Sequence[float]] = None):
        super().__init__(message)
        self.residual_history: List[float] = list(residual_history or [])


class AssemblyError(FallingSphereError):
    """Raised when an assembled system that must be regular turns out singular."""
    pass


class StoreError(FallingSphereError):
    """Raised when a stored record is missing or corrupted."""
    pass
