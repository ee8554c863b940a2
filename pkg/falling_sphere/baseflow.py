"""
Axisymmetric free-fall branch.

The steady state of the falling sphere solves

    S c - lam g - lam N(c) = 0

on the m = 0 reflection-even basis. The fall speed xi0 is the coefficient
of the translational lifting field, so the force balance on the sphere is
the residual row tested with that field. Rotational lifting fields are
not part of the basis, which enforces omega0 = 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .config import RunConfig, StepPolicy
from .exceptions import (
    ConvergenceError,
    FingerprintMismatchError,
    SingularJacobianError,
    ValidationError,
)
from .forms import (
    assemble_D1,
    assemble_g,
    assemble_S,
    coupling_block,
    nonlinear_map,
    recover_force_torque,
    weak_residual,
)
from .geometry import DiscreteField, ModalBasis, build_basis


logger = logging.getLogger(__name__)

COND_LIMIT = 1e14
DIVERGENCE_FACTOR = 1e8
JUMP_FACTOR = 10.0


@dataclass(frozen=True, eq=False)
class BaseFlow:
    """
    Converged point of the axisymmetric branch.

    ``energy`` is ``||D(v0)||²``; ``residual_history`` holds the S^-1-norm
    of the residual after every Newton update.
    """

    lam: float
    field: DiscreteField
    residual_norm: float
    fingerprint: str
    energy: float
    iterations: int = 0
    residual_history: Tuple[float, ...] = ()
    convergence_rate: Optional[float] = None

    @property
    def coeffs(self) -> np.ndarray:
        return self.field.coeffs

    @property
    def basis(self) -> ModalBasis:
        return self.field.family  # type: ignore[return-value]

    @property
    def xi0(self) -> float:
        return float(np.real(self.field.trace_vector[0]))

    @property
    def omega(self) -> np.ndarray:
        return np.real(self.field.trace_vector[1:])

    @property
    def energy_defect(self) -> float:
        """Relative defect of ``||D(v0)||² = lam xi0``."""
        target = self.lam * self.xi0
        return abs(self.energy - target) / max(1.0, abs(target))

    def wrench(self, tolerance: float = 1e-8) -> Tuple[np.ndarray, np.ndarray]:
        """Force and torque on the sphere, recovered weakly."""
        return recover_force_torque(self.field, self.lam, self.residual_norm, tolerance)


@dataclass
class Branch:
    """Base flows on increasing Galilei numbers with continuation metadata."""

    points: List[BaseFlow] = field(default_factory=list)
    steps: List[float] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.points)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def xi0s(self) -> np.ndarray:
        return np.array([p.xi0 for p in self.points])

    def append(self, point: BaseFlow) -> None:
        """
        Append a point, keeping the Galilei numbers strictly increasing.

        Raises:
            ValidationError: If ``point.lam`` does not exceed the last value
        """
        if self.points:
            last = self.points[-1]
            if point.lam <= last.lam:
                raise ValidationError(
                    f"Branch Galilei numbers must increase: {point.lam} after {last.lam}"
                )
            if point.fingerprint != last.fingerprint:
                raise FingerprintMismatchError(
                    "Branch points must share one basis",
                    [f"basis: {last.fingerprint} != {point.fingerprint}"],
                )
            self.steps.append(point.lam - last.lam)
        self.points.append(point)
        self.iterations.append(point.iterations)

    def nearest(self, lam: float) -> BaseFlow:
        if not self.points:
            raise ValidationError("Branch is empty")
        return self.points[int(np.argmin(np.abs(self.lambdas - lam)))]

    def derivatives(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Finite-difference estimates of ``dc/dlam`` and ``d²c/dlam²`` at every
        point, second order in the interior on non-uniform grids.
        """
        coeffs = np.array([p.coeffs for p in self.points])
        if len(self.points) < 2:
            zeros = np.zeros_like(coeffs)
            return zeros, zeros.copy()
        edge = 2 if len(self.points) >= 3 else 1
        first = np.gradient(coeffs, self.lambdas, axis=0, edge_order=edge)
        second = np.gradient(first, self.lambdas, axis=0, edge_order=edge)
        return first, second


@dataclass(frozen=True)
class AxisymmetryDiagnostics:
    """Largest residual component per azimuthal mode, and the recovered torque."""

    residuals: Dict[int, float]
    torque: Tuple[float, float, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        nonaxial = [r for m, r in self.residuals.items() if m != 0]
        return all(r <= self.tolerance for r in nonaxial)


class BaseFlowSolver:
    """
    Newton solver for the base branch on a fixed m = 0 basis.

    The Jacobian ``S - lam (K(v) + xi(v) D1)`` is the exact derivative of
    the discrete residual, so the same matrices serve the linearization
    used by the spectrum module.
    """

    def __init__(
        self,
        basis: ModalBasis,
        tolerance: float = 1e-10,
        max_iterations: int = 30,
        energy_tolerance: float = 1e-8,
        quadrature_tolerance: float = 1e-8,
    ):
        """
        Args:
            basis: m = 0 basis carrying the translational lifting field
            tolerance: Newton tolerance in the S^-1 norm
            max_iterations: Newton iteration cap
            energy_tolerance: Relative tolerance of the energy equality
            quadrature_tolerance: Tolerance of the quadrature check

        Raises:
            ValidationError: If the basis cannot represent an axisymmetric fall
        """
        if basis.m != 0:
            raise ValidationError(f"Base flow needs the m = 0 basis, got m = {basis.m}")
        if "xi" not in [member.lift for member in basis.members]:
            raise ValidationError("Base-flow basis lacks the translational lifting field")
        rotational = [k for k in basis.lift_labels if "omega" in k]
        if rotational:
            raise ValidationError(f"Base-flow basis must not carry rotational lifts: {rotational}")
        self.logger = logging.getLogger(__name__)
        self.basis = basis
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.energy_tolerance = energy_tolerance
        self.S = assemble_S(basis, tolerance=quadrature_tolerance)
        self.D1 = assemble_D1(basis)
        self.g = assemble_g(basis)
        self._cholesky = scipy.linalg.cho_factor(self.S.matrix)

    @classmethod
    def from_config(cls, config: RunConfig, scale: float = 1.0) -> "BaseFlowSolver":
        return cls(
            config.basis(0, "even", scale),
            tolerance=config.tolerances.newton,
            energy_tolerance=config.tolerances.energy,
            quadrature_tolerance=config.tolerances.quadrature,
        )

    @property
    def fingerprint(self) -> str:
        return self.basis.fingerprint

    def dual_norm(self, f: np.ndarray) -> float:
        """``||f||_{S^-1} = sqrt(f^T S^-1 f)``."""
        return float(np.sqrt(max(f @ scipy.linalg.cho_solve(self._cholesky, f), 0.0)))

    def residual(self, coeffs: np.ndarray, lam: float) -> np.ndarray:
        """``F(c) = S c - lam g - lam N(c)``."""
        N = nonlinear_map(self.basis, coeffs, self.D1, self.basis.rule)
        return self.S.matrix @ coeffs - lam * self.g.vector - lam * N

    def linearization(self, coeffs: np.ndarray) -> np.ndarray:
        """``K(v) + xi(v) D1``, the derivative of ``N`` at ``c``."""
        v = self.basis.field(coeffs)
        K = coupling_block(self.basis, self.basis, v, self.basis.rule)
        return K + v.trace_vector[0] * self.D1.matrix

    def jacobian(self, coeffs: np.ndarray, lam: float) -> np.ndarray:
        return self.S.matrix - lam * self.linearization(coeffs)

    def _initial(self, guess: Union["BaseFlow", np.ndarray, None]) -> np.ndarray:
        if guess is None:
            return np.zeros(self.basis.size)
        if isinstance(guess, BaseFlow):
            if guess.fingerprint == self.fingerprint:
                return guess.coeffs.astype(float).copy()
            # coarser solutions embed by label
            return guess.basis.embed(guess.coeffs, self.basis)
        coeffs = np.asarray(guess, dtype=float)
        if coeffs.shape != (self.basis.size,):
            raise ValidationError(
                f"Initial guess has shape {coeffs.shape}, expected ({self.basis.size},)"
            )
        return coeffs.copy()

    def solve(self, lam: float, guess: Union[BaseFlow, np.ndarray, None] = None) -> BaseFlow:
        """
        Solve for the base flow at Galilei number ``lam``.

        Args:
            lam: Galilei number (>= 0)
            guess: Previous solution or coefficient vector; zero when omitted

        Returns:
            Converged BaseFlow

        Raises:
            ValidationError: If ``lam`` is negative
            ConvergenceError: If Newton's method diverges or stalls
            SingularJacobianError: If the Jacobian is singular (fold)
        """
        if lam < 0:
            raise ValidationError(f"Galilei number must be non-negative, got {lam}")
        c = self._initial(guess)
        threshold = self.tolerance * max(1.0, lam * self.dual_norm(self.g.vector))
        history: List[float] = []
        for iteration in range(self.max_iterations + 1):
            F = self.residual(c, lam)
            r = self.dual_norm(F)
            history.append(r)
            self.logger.debug(f"Newton lam={lam:.6g} iteration {iteration}: residual {r:.3e}")
            if not np.isfinite(r) or r > DIVERGENCE_FACTOR * max(history[0], threshold):
                raise ConvergenceError(
                    f"Newton iteration diverged at lam={lam} (residual {r:.3e})", c, history
                )
            if r <= threshold:
                break
            if iteration == self.max_iterations:
                raise ConvergenceError(
                    f"Newton iteration did not converge at lam={lam} in "
                    f"{self.max_iterations} iterations (residual {r:.3e})",
                    c,
                    history,
                )
            J = self.jacobian(c, lam)
            condition = float(np.linalg.cond(J))
            if not np.isfinite(condition) or condition > COND_LIMIT:
                raise SingularJacobianError(
                    f"Jacobian is singular at lam={lam} (condition {condition:.3e}); "
                    f"the branch folds",
                    c,
                    history,
                )
            c = c - scipy.linalg.solve(J, F)
        rate = None
        if len(history) >= 3 and history[-2] > 0:
            rate = history[-1] / history[-2] ** 2
        energy = float(c @ self.S.matrix @ c)
        flow = BaseFlow(
            lam=float(lam),
            field=self.basis.field(c),
            residual_norm=history[-1],
            fingerprint=self.fingerprint,
            energy=energy,
            iterations=len(history) - 1,
            residual_history=tuple(history),
            convergence_rate=rate,
        )
        if flow.energy_defect > self.energy_tolerance:
            self.logger.warning(
                f"Energy equality defect {flow.energy_defect:.3e} at lam={lam} exceeds "
                f"{self.energy_tolerance:.1e}"
            )
        if lam > 0 and flow.xi0 <= 0:
            self.logger.warning(f"Fall speed is not positive at lam={lam}: xi0={flow.xi0:.6e}")
        return flow

    def tangent(self, flow: BaseFlow) -> np.ndarray:
        """
        ``dc/dlam = J^-1 (g + N(c))`` at a converged point.

        Raises:
            SingularJacobianError: If the Jacobian is singular
        """
        c = flow.coeffs
        J = self.jacobian(c, flow.lam)
        rhs = self.g.vector + nonlinear_map(self.basis, c, self.D1, self.basis.rule)
        try:
            return scipy.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as e:
            raise SingularJacobianError(f"Jacobian is singular at lam={flow.lam}", c) from e

    def energy_norm(self, coeffs: np.ndarray) -> float:
        return float(np.sqrt(max(coeffs @ self.S.matrix @ coeffs, 0.0)))


def solve_base(
    solver: BaseFlowSolver, lam: float, guess: Union[BaseFlow, np.ndarray, None] = None
) -> BaseFlow:
    """Solve the base-flow system at a single Galilei number."""
    return solver.solve(lam, guess)


def _uniform_grid(lam_start: float, lam_end: float, points: int) -> np.ndarray:
    if lam_end == lam_start or points == 1:
        return np.array([lam_start])
    return np.linspace(lam_start, lam_end, points)


def continue_branch(
    solver: BaseFlowSolver,
    lam_start: float,
    lam_end: float,
    policy: Optional[StepPolicy] = None,
    branch: Optional[Branch] = None,
) -> Branch:
    """
    Continue the base branch from ``lam_start`` to ``lam_end``.

    A fixed grid is used when ``policy.points`` is set; otherwise the step
    halves on Newton failure and grows after fast convergence. A fold or
    divergence truncates the branch and records a diagnostic.

    Args:
        solver: Newton solver on the m = 0 basis
        lam_start: First Galilei number (>= 0)
        lam_end: Last Galilei number (>= lam_start)
        policy: Step policy; the default computes five uniform points
        branch: Existing branch to append to; its last point seeds the
            continuation and is not recomputed

    Returns:
        Branch with the computed points

    Raises:
        ValidationError: On a negative or reversed range
    """
    policy = policy or StepPolicy()
    if lam_start < 0:
        raise ValidationError(f"Branch must start at a non-negative Galilei number, got {lam_start}")
    if lam_end < lam_start:
        raise ValidationError(f"Branch end {lam_end} lies below its start {lam_start}")
    branch = branch if branch is not None else Branch()
    previous: Optional[BaseFlow] = branch.points[-1] if branch.points else None
    last_ratio: Optional[float] = None

    def accept(flow: BaseFlow) -> None:
        nonlocal previous, last_ratio
        if previous is not None:
            jump = solver.energy_norm(flow.coeffs - previous.coeffs)
            ratio = jump / (flow.lam - previous.lam)
            if last_ratio is not None and ratio > JUMP_FACTOR * max(last_ratio, 1e-300):
                message = (
                    f"Coefficient jump {ratio:.3e} per unit lam at lam={flow.lam} exceeds "
                    f"{JUMP_FACTOR:g}x the previous step; another solution may have been reached"
                )
                logger.warning(message)
                branch.diagnostics.append(message)
            last_ratio = ratio
        branch.append(flow)
        previous = flow
        logger.info(
            f"Base point lam={flow.lam:.6g}: xi0={flow.xi0:.10g}, "
            f"||D(v0)||²={flow.energy:.6e}, {flow.iterations} Newton iterations"
        )

    def predict(lam: float) -> Union[BaseFlow, np.ndarray, None]:
        if previous is None:
            return None
        try:
            return previous.coeffs + (lam - previous.lam) * solver.tangent(previous)
        except SingularJacobianError:
            return previous

    def stop(reason: str, error: Exception) -> None:
        message = f"{reason}: {error}"
        logger.warning(f"Branch truncated. {message}")
        branch.diagnostics.append(message)
        branch.truncated = True

    if policy.points is not None:
        for lam in _uniform_grid(lam_start, lam_end, policy.points):
            if previous is not None and lam <= previous.lam:
                continue
            try:
                accept(solver.solve(float(lam), predict(float(lam))))
            except SingularJacobianError as e:
                stop("fold detected", e)
                break
            except ConvergenceError as e:
                stop("Newton divergence", e)
                break
        return branch

    lam = lam_start if previous is None or previous.lam < lam_start else previous.lam
    if previous is None or previous.lam < lam_start:
        try:
            accept(solver.solve(lam, predict(lam)))
        except ConvergenceError as e:
            stop("no converged start point", e)
            return branch
    step = min(policy.initial, policy.max_step)
    while previous is not None and previous.lam < lam_end:
        target = min(previous.lam + step, lam_end)
        try:
            flow = solver.solve(target, predict(target))
        except SingularJacobianError as e:
            stop("fold detected", e)
            break
        except ConvergenceError as e:
            step *= 0.5
            if step < policy.min_step:
                stop("step size fell below min_step", e)
                break
            logger.debug(f"Newton failed at lam={target}; halving step to {step:.3e}")
            continue
        accept(flow)
        if flow.iterations <= 4:
            step = min(step * policy.growth, policy.max_step)
    return branch


def check_axisymmetry(
    flow: BaseFlow,
    noise: Optional[DiscreteField] = None,
    modes: Sequence[int] = (1, 2),
    tolerance: float = 1e-10,
) -> AxisymmetryDiagnostics:
    """
    Test the base flow against the full residual of the nonaxisymmetric modes.

    Args:
        flow: Converged base flow
        noise: Optional field added to the base flow (detector check)
        modes: Azimuthal modes whose residual blocks are evaluated
        tolerance: Threshold for the nonaxisymmetric blocks

    Returns:
        AxisymmetryDiagnostics; nothing is raised
    """
    basis = flow.basis
    fields = [flow.field] if noise is None else [flow.field, noise]
    residuals: Dict[int, float] = {}
    for m in sorted({0, *modes}):
        test = build_basis(m, max(basis.L, m), basis.N, sector="full", scale=basis.scale,
                           margin=basis.margin, radial_map=basis.radial_map)
        r = weak_residual(test, fields, flow.lam)
        residuals[m] = float(np.max(np.abs(r))) if r.size else 0.0
        logger.debug(f"Axisymmetry check lam={flow.lam:.6g}, m={m}: max residual {residuals[m]:.3e}")
    _, torque = flow.wrench()
    return AxisymmetryDiagnostics(residuals, (float(torque[0]), float(torque[1]), float(torque[2])), tolerance)
