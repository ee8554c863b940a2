"""
Linearized operator and its spectrum near mu = 1.

Per azimuthal mode the linearization of the base-flow equation at
(v0, xi0, lam) leads to the generalized eigenproblem

    lam (xi0 D1 + K(v0)) w = mu S w

whose eigenvalue mu = 1 marks a steady bifurcation. Adjoint vectors
satisfy ``z^H A = mu z^H S`` and are paired through ``z^H S w``.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs

from .baseflow import BaseFlow, BaseFlowSolver, Branch
from .exceptions import (
    AssemblyError,
    EigenSolverError,
    FingerprintMismatchError,
    ValidationError,
)
from .forms import FormMatrix, assemble_D1, assemble_S, assemble_trilinear
from .geometry import DiscreteField, ModalBasis, build_basis


logger = logging.getLogger(__name__)

METHODS = ("auto", "shift-invert", "dense")
DEFECT_TOLERANCE = 1e-6
REAL_TOLERANCE = 1e-10
POLISH_OFFSET = 1e-9


def _matrix_fingerprint(*matrices: np.ndarray) -> str:
    digest = hashlib.sha256()
    for M in matrices:
        digest.update(np.ascontiguousarray(M, dtype=float).tobytes())
    return digest.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """
    Matrices of the linearized operator of one mode at one Galilei number.

    ``operator`` is ``xi0 D1 + K`` and ``A = lam * operator``.
    """

    m: Optional[int]
    lam: float
    xi0: float
    S: np.ndarray
    D1: np.ndarray
    K: np.ndarray
    fingerprint: str
    basis: Optional[ModalBasis] = None
    base: Optional[BaseFlow] = None
    label: str = "physical"

    def __post_init__(self) -> None:
        n = self.S.shape[0]
        for name, M in (("S", self.S), ("D1", self.D1), ("K", self.K)):
            if M.shape != (n, n):
                raise ValidationError(f"Bundle matrix {name} has shape {M.shape}, expected {(n, n)}")
        scale = max(1.0, float(np.max(np.abs(self.S)))) if n else 1.0
        if n and np.max(np.abs(self.S - self.S.T)) > 1e-12 * scale:
            raise ValidationError("Bundle matrix S is not symmetric")
        if n and np.max(np.abs(self.D1 + self.D1.T)) > 1e-12 * max(1.0, float(np.max(np.abs(self.D1)))):
            raise ValidationError("Bundle matrix D1 is not skew")
        try:
            scipy.linalg.cholesky(self.S)
        except np.linalg.LinAlgError as e:
            raise ValidationError("Bundle matrix S is not positive definite") from e

    @classmethod
    def from_matrices(
        cls,
        S: np.ndarray,
        D1: Optional[np.ndarray],
        K: np.ndarray,
        lam: float,
        xi0: float = 0.0,
        m: Optional[int] = None,
        label: str = "manual",
    ) -> "OperatorBundle":
        """Bundle built from explicit matrices (synthetic and manufactured problems)."""
        S = np.asarray(S, dtype=float)
        D1 = np.zeros_like(S) if D1 is None else np.asarray(D1, dtype=float)
        K = np.asarray(K, dtype=float)
        return cls(m, float(lam), float(xi0), S, D1, K, _matrix_fingerprint(S), label=label)

    @property
    def size(self) -> int:
        return int(self.S.shape[0])

    @property
    def operator(self) -> np.ndarray:
        return self.xi0 * self.D1 + self.K

    @property
    def A(self) -> np.ndarray:
        return self.lam * self.operator


class BundleAssembler:
    """Assembles bundles of one mode; S and D1 are computed once."""

    def __init__(self, basis: ModalBasis, quadrature_tolerance: float = 1e-8):
        self.basis = basis
        self.S = assemble_S(basis, tolerance=quadrature_tolerance)
        self.D1 = assemble_D1(basis)
        for form in (self.S, self.D1):
            if form.fingerprint != basis.fingerprint:
                raise FingerprintMismatchError(
                    f"Form {form.kind} was assembled on another basis",
                    [f"basis: {basis.fingerprint} != {form.fingerprint}"],
                )

    def assemble(self, base: BaseFlow) -> OperatorBundle:
        K = assemble_trilinear(self.basis, base.field)
        if K.fingerprint != self.S.fingerprint:
            raise FingerprintMismatchError(
                "Trilinear matrix and Gram matrix disagree on the basis",
                [f"basis: {self.S.fingerprint} != {K.fingerprint}"],
            )
        return OperatorBundle(
            self.basis.m, base.lam, base.xi0, self.S.matrix, self.D1.matrix, K.matrix,
            self.basis.fingerprint, self.basis, base,
        )


def assemble_bundle(
    base: BaseFlow,
    m: int,
    basis: Optional[ModalBasis] = None,
    sector: str = "even",
    S: Optional[FormMatrix] = None,
    D1: Optional[FormMatrix] = None,
) -> OperatorBundle:
    """
    Assemble ``S``, ``D1`` and ``K(v0)`` of mode ``m`` at a base flow.

    Args:
        base: Converged base flow
        m: Azimuthal mode
        basis: Basis of mode ``m``; built at the base-flow resolution if omitted
        sector: Reflection sector of the built basis
        S: Previously assembled Gram matrix to reuse
        D1: Previously assembled skew matrix to reuse

    Raises:
        FingerprintMismatchError: If reused matrices belong to another basis
        ValidationError: If ``basis`` is of another mode
    """
    if basis is None:
        ref = base.basis
        basis = build_basis(m, max(ref.L, m), ref.N, sector=sector, scale=ref.scale,
                            margin=ref.margin, radial_map=ref.radial_map)
    if basis.m != m:
        raise ValidationError(f"Basis is of mode {basis.m}, requested mode {m}")
    S = S or assemble_S(basis)
    D1 = D1 or assemble_D1(basis)
    differences = [
        f"{form.kind}: {form.fingerprint} != {basis.fingerprint}"
        for form in (S, D1)
        if form.fingerprint != basis.fingerprint
    ]
    if differences:
        raise FingerprintMismatchError("Bundle matrices belong to another basis", differences)
    K = assemble_trilinear(basis, base.field)
    return OperatorBundle(m, base.lam, base.xi0, S.matrix, D1.matrix, K.matrix,
                          basis.fingerprint, basis, base)


# ---------------------------------------------------------------------------
# Eigenpairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenPair:
    """
    Eigenvalue ``mu`` of ``lam M(lam)`` with right vector ``w1`` and adjoint
    vector ``w1_star``.

    ``pairing`` is ``w1_star^H S w1`` of the S-unit vectors before
    normalization; after normalization the pairing is 1 unless the pair is
    ``defective``.
    """

    mu: complex
    w1: np.ndarray
    w1_star: np.ndarray
    pairing: complex
    gap: float
    residual: float
    adjoint_residual: float
    defective: bool
    m: Optional[int] = None
    lam: float = 0.0
    bundle: Optional[OperatorBundle] = None

    @property
    def is_real(self) -> bool:
        return abs(np.imag(self.mu)) <= REAL_TOLERANCE * max(1.0, abs(self.mu))

    def field(self) -> DiscreteField:
        """Right eigenvector as a field over the bundle basis."""
        if self.bundle is None or self.bundle.basis is None:
            raise ValidationError("Eigenpair carries no basis")
        return self.bundle.basis.field(self.w1)

    def normalized_pairing(self) -> complex:
        if self.bundle is None:
            raise ValidationError("Eigenpair carries no bundle")
        return complex(np.vdot(self.w1_star, self.bundle.S @ self.w1))


def _s_norm(S: np.ndarray, x: np.ndarray) -> float:
    return float(np.sqrt(abs(np.vdot(x, S @ x))))


def _align_phase(x: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(x)))
    if x[k] == 0:
        return x
    return x * (np.conj(x[k]) / abs(x[k]))


def right_residual(A: np.ndarray, S: np.ndarray, mu: complex, w: np.ndarray) -> float:
    Sw = S @ w
    return float(np.linalg.norm(A @ w - mu * Sw) / max(np.linalg.norm(Sw), np.finfo(float).tiny))


def left_residual(A: np.ndarray, S: np.ndarray, mu: complex, z: np.ndarray) -> float:
    zS = np.conj(z) @ S
    return float(np.linalg.norm(np.conj(z) @ A - mu * zS) / max(np.linalg.norm(zS), np.finfo(float).tiny))


def _real_if_close(x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x) and np.max(np.abs(np.imag(x))) <= 1e-8 * np.max(np.abs(x)):
        return np.real(x).copy()
    return x


def _make_pair(bundle: OperatorBundle, mu: complex, w: np.ndarray, z: np.ndarray, gap: float) -> EigenPair:
    S, A = bundle.S, bundle.A
    real = abs(np.imag(mu)) <= REAL_TOLERANCE * max(1.0, abs(mu))
    w = _align_phase(w / _s_norm(S, w))
    z = _align_phase(z / _s_norm(S, z))
    if real:
        mu = float(np.real(mu))
        w, z = _real_if_close(w), _real_if_close(z)
    raw = complex(np.vdot(z, S @ w))
    defective = abs(raw) < DEFECT_TOLERANCE
    if not defective:
        z = z / np.conj(raw)
        if real:
            z = _real_if_close(z)
    return EigenPair(
        mu=mu,
        w1=w,
        w1_star=z,
        pairing=raw,
        gap=gap,
        residual=right_residual(A, S, mu, w),
        adjoint_residual=left_residual(A, S, mu, z),
        defective=defective,
        m=bundle.m,
        lam=bundle.lam,
        bundle=bundle,
    )


def _gaps(mus: np.ndarray) -> np.ndarray:
    gaps = np.full(mus.size, np.inf)
    for i in range(mus.size):
        others = np.delete(mus, i)
        if others.size:
            gaps[i] = float(np.min(np.abs(others - mus[i])))
    return gaps


def dense_spectrum(bundle: OperatorBundle, shift: complex = 1.0) -> List[EigenPair]:
    """
    Every eigenpair of the bundle from a dense QZ solve, ordered by distance
    to ``shift``.
    """
    mus, vl, vr = scipy.linalg.eig(bundle.A, bundle.S, left=True, right=True)
    order = np.argsort(np.abs(mus - shift), kind="stable")
    mus, vl, vr = mus[order], vl[:, order], vr[:, order]
    gaps = _gaps(mus)
    return [_make_pair(bundle, mus[i], vr[:, i], vl[:, i], float(gaps[i])) for i in range(mus.size)]


def _polish(A: np.ndarray, S: np.ndarray, mu: complex, w: np.ndarray, seed: int) -> Tuple[complex, np.ndarray, np.ndarray]:
    """
    Refine a Ritz pair by inverse iteration and compute the adjoint vector
    from the transposed factorization of the same shifted matrix.
    """
    offset = POLISH_OFFSET * max(1.0, abs(mu))
    shift = mu + offset
    dtype = complex if np.iscomplexobj(w) or np.iscomplexobj(shift) else float
    lu = scipy.linalg.lu_factor((A - shift * S).astype(dtype))
    for _ in range(2):
        w = scipy.linalg.lu_solve(lu, S @ w)
        w = w / np.linalg.norm(w)
    u = np.random.default_rng(seed).standard_normal(A.shape[0]).astype(dtype)
    for _ in range(3):
        u = scipy.linalg.lu_solve(lu, S @ u, trans=1)
        u = u / np.linalg.norm(u)
    z = np.conj(u)
    denominator = np.vdot(z, S @ w)
    if abs(denominator) > DEFECT_TOLERANCE * _s_norm(S, z) * _s_norm(S, w):
        mu = complex(np.vdot(z, A @ w) / denominator)
    return mu, w, z


def _shift_invert(
    bundle: OperatorBundle, shift: complex, k: int, tolerance: float, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Ritz values and vectors nearest ``shift``; complex shifts use a real 2n embedding."""
    A, S, n = bundle.A, bundle.S, bundle.size
    rng = np.random.default_rng(seed)
    sigma = complex(shift)
    if sigma.imag == 0.0:
        lu = scipy.linalg.lu_factor(A - sigma.real * S)
        op = LinearOperator((n, n), matvec=lambda x: scipy.linalg.lu_solve(lu, S @ x), dtype=float)
        nu, vecs = eigs(op, k=k, which="LM", tol=tolerance * 1e-2, v0=rng.standard_normal(n))
        return sigma.real + 1.0 / nu, vecs

    a, b = sigma.real, sigma.imag
    B = A - a * S
    embedded = np.block([[B, b * S], [-b * S, B]])
    lu = scipy.linalg.lu_factor(embedded)
    doubled = scipy.linalg.block_diag(S, S)
    op = LinearOperator((2 * n, 2 * n), matvec=lambda x: scipy.linalg.lu_solve(lu, doubled @ x), dtype=float)
    nu, vecs = eigs(op, k=min(2 * k, 2 * n - 2), which="LM", tol=tolerance * 1e-2,
                    v0=rng.standard_normal(2 * n))
    found: List[complex] = []
    vectors: List[np.ndarray] = []
    for i, value in enumerate(nu):
        z1, z2 = vecs[:n, i], vecs[n:, i]
        best: Optional[Tuple[float, complex, np.ndarray]] = None
        for base_shift, x in ((sigma, z1 + 1j * z2), (np.conj(sigma), z1 - 1j * z2)):
            if np.linalg.norm(x) <= 1e-8 * np.linalg.norm(vecs[:, i]):
                continue
            mu = base_shift + 1.0 / value
            res = right_residual(A, S, mu, x)
            if best is None or res < best[0]:
                best = (res, mu, x)
        if best is None or best[0] > 1e-4:
            continue
        _, mu, x = best
        if any(abs(mu - other) <= 1e-8 * max(1.0, abs(mu)) for other in found):
            continue
        found.append(mu)
        vectors.append(x)
    order = np.argsort([abs(mu - sigma) for mu in found], kind="stable")[:k]
    mus = np.array([found[i] for i in order], dtype=complex)
    W = np.column_stack([vectors[i] for i in order]) if len(order) else np.zeros((n, 0), dtype=complex)
    return mus, W


def leading_eigs(
    bundle: OperatorBundle,
    shift: complex = 1.0,
    count: int = 4,
    method: str = "auto",
    tolerance: float = 1e-8,
    dense_limit: int = 400,
    seed: int = 0,
) -> List[EigenPair]:
    """
    Eigenpairs nearest ``shift`` with adjoint vectors and biorthogonal
    normalization.

    Args:
        bundle: Operator bundle
        shift: Target; 1 is the bifurcation-relevant value
        count: Number of pairs returned
        method: "auto", "shift-invert" or "dense"
        tolerance: Relative residual bound of every returned pair
        dense_limit: Largest problem size for the dense fallback
        seed: Seed of the start vectors

    Returns:
        EigenPairs ordered by distance to ``shift``

    Raises:
        ValidationError: On invalid arguments
        EigenSolverError: If the iteration does not converge and the dense
            fallback is unavailable
    """
    if count < 1:
        raise ValidationError(f"Eigenpair count must be at least 1, got {count}")
    if method not in METHODS:
        raise ValidationError(f"Unknown eigen method '{method}', expected one of {METHODS}")
    n = bundle.size
    count = min(count, n)
    dense_ok = n <= dense_limit
    if method == "dense" or (method == "auto" and count >= n - 2 and dense_ok):
        return dense_spectrum(bundle, shift)[:count]
    if count >= n - 1:
        raise ValidationError(f"Shift-invert needs count < {n - 1}, got {count}")

    k = min(count + 1, n - 2)
    history: List[float] = []
    try:
        mus, W = _shift_invert(bundle, shift, k, tolerance, seed)
        pairs: List[Tuple[complex, np.ndarray, np.ndarray]] = []
        for i in range(mus.size):
            mu, w, z = _polish(bundle.A, bundle.S, complex(mus[i]), W[:, i], seed + i)
            history.append(right_residual(bundle.A, bundle.S, mu, w))
            pairs.append((mu, w, z))
        if len(pairs) < count or max(history[:count], default=np.inf) > tolerance:
            raise EigenSolverError(
                f"Shift-invert iteration left residuals {['%.2e' % h for h in history]} "
                f"above {tolerance:.1e}",
                history,
            )
    except ArpackNoConvergence as e:
        if e.eigenvectors.shape[0] == n:
            history = [
                right_residual(bundle.A, bundle.S, complex(shift) + 1.0 / v, e.eigenvectors[:, i])
                for i, v in enumerate(e.eigenvalues)
            ]
        if method == "auto" and dense_ok:
            logger.warning(f"Shift-invert did not converge on mode {bundle.m}; using the dense solver")
            return dense_spectrum(bundle, shift)[:count]
        raise EigenSolverError(f"Shift-invert iteration did not converge: {e}", history) from e
    except EigenSolverError:
        if method == "auto" and dense_ok:
            logger.warning(f"Shift-invert residuals too large on mode {bundle.m}; using the dense solver")
            return dense_spectrum(bundle, shift)[:count]
        raise
    mus_polished = np.array([p[0] for p in pairs])
    gaps = _gaps(mus_polished)
    result = [_make_pair(bundle, mu, w, z, float(gaps[i])) for i, (mu, w, z) in enumerate(pairs)]
    result.sort(key=lambda pair: abs(pair.mu - shift))
    logger.debug(
        f"Mode {bundle.m} at lam={bundle.lam:.6g}: mu nearest {shift} = "
        f"{[complex(p.mu) for p in result[:count]]}"
    )
    return result[:count]


# ---------------------------------------------------------------------------
# Resolvent and bounds
# ---------------------------------------------------------------------------


def dual_norm(S: Union[np.ndarray, OperatorBundle], f: np.ndarray) -> float:
    """Discrete dual norm ``sqrt(f^T S^-1 f)``."""
    S = S.S if isinstance(S, OperatorBundle) else S
    value = np.vdot(f, scipy.linalg.solve(S, f, assume_a="pos"))
    return float(np.sqrt(max(np.real(value), 0.0)))


def solve_resolvent(bundle: OperatorBundle, f: np.ndarray, rho: float) -> DiscreteField:
    """
    Solve ``(S - rho xi0 D1) u = f``.

    Args:
        bundle: Bundle providing S, D1, xi0 and the basis
        f: Dual vector (one entry per basis member)
        rho: Real multiplier of the skew part

    Returns:
        Solution as a field over the bundle basis

    Raises:
        ValidationError: If ``rho * xi0`` is not real, ``f`` is not finite or
            the bundle has no basis
        AssemblyError: If the system is singular
    """
    coupling = complex(rho) * bundle.xi0
    if coupling.imag != 0:
        raise ValidationError(f"rho * xi0 must be real, got {coupling}")
    f = np.asarray(f)
    if f.shape != (bundle.size,) or not np.all(np.isfinite(f)):
        raise ValidationError(f"Right-hand side must be a finite vector of length {bundle.size}")
    if bundle.basis is None:
        raise ValidationError("Resolvent solution needs a bundle with a basis")
    M = bundle.S - coupling.real * bundle.D1
    try:
        u = scipy.linalg.solve(M, f)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise AssemblyError(f"Resolvent system is singular: {e}") from e
    if not np.all(np.isfinite(u)):
        raise AssemblyError("Resolvent solve produced non-finite values")
    return bundle.basis.field(u)


def real_eigenvalue_bound(bundle: OperatorBundle) -> float:
    """
    Bound ``lam * max |eig(sym(K), S)|`` on every real eigenvalue; the skew
    part drops out of real Rayleigh quotients.
    """
    sym = 0.5 * (bundle.K + bundle.K.T)
    values = scipy.linalg.eigh(sym, bundle.S, eigvals_only=True)
    return float(abs(bundle.lam) * np.max(np.abs(values))) if values.size else 0.0


# ---------------------------------------------------------------------------
# Bundle sources
# ---------------------------------------------------------------------------


class BundleSource(Protocol):
    """Anything that provides the bundle of one mode at any Galilei number."""

    m: Optional[int]
    label: str
    constant: bool

    def bundle(self, lam: float) -> OperatorBundle:
        ...


class BranchBundleSource:
    """
    Bundles along the physical base branch.

    Base flows at Galilei numbers off the stored branch are solved on demand,
    seeded with the nearest branch point.
    """

    label = "physical"
    constant = False

    def __init__(self, solver: BaseFlowSolver, assembler: BundleAssembler, branch: Optional[Branch] = None):
        if branch is not None and branch.points and branch.points[0].fingerprint != solver.fingerprint:
            raise FingerprintMismatchError(
                "Branch was computed on another base-flow basis",
                [f"basis: {branch.points[0].fingerprint} != {solver.fingerprint}"],
            )
        self.solver = solver
        self.assembler = assembler
        self.branch = branch
        self.m = assembler.basis.m
        self._cache: Dict[float, OperatorBundle] = {}

    def base(self, lam: float) -> BaseFlow:
        if self.branch is not None and self.branch.points:
            nearest = self.branch.nearest(lam)
            if nearest.lam == lam:
                return nearest
            guess = nearest.coeffs + (lam - nearest.lam) * self.solver.tangent(nearest)
            return self.solver.solve(lam, guess)
        return self.solver.solve(lam)

    def bundle(self, lam: float) -> OperatorBundle:
        key = float(lam)
        if key not in self._cache:
            self._cache[key] = self.assembler.assemble(self.base(key))
        return self._cache[key]

    @property
    def lambdas(self) -> Optional[np.ndarray]:
        return self.branch.lambdas if self.branch is not None else None


class ManufacturedFamily:
    """
    Closed-form operator family ``K(lam) = sign * lam^(p-1) / lam_star * S E``
    with ``E = diag(1, spread, spread², ...)`` and no skew term.

    The eigenvalues are ``sign * lam^p / lam_star * spread^k``; for a positive
    sign the leading one crosses 1 at ``lam_star^(1/p)``.
    """

    label = "manufactured"

    def __init__(
        self,
        S: Union[np.ndarray, FormMatrix],
        lambda_star: float,
        spread: float = 0.5,
        power: int = 2,
        sign: float = 1.0,
        m: Optional[int] = None,
        basis: Optional[ModalBasis] = None,
    ):
        if lambda_star <= 0 or power < 1 or not (0 < spread <= 1):
            raise ValidationError("Manufactured family needs lambda_star > 0, power >= 1, 0 < spread <= 1")
        self.S = S.matrix if isinstance(S, FormMatrix) else np.asarray(S, dtype=float)
        self.lambda_star = float(lambda_star)
        self.spread = float(spread)
        self.power = int(power)
        self.sign = float(sign)
        self.m = m if m is not None else (basis.m if basis is not None else None)
        self.basis = basis
        self.constant = self.power == 1
        self._E = self.spread ** np.arange(self.S.shape[0], dtype=float)
        self._fingerprint = basis.fingerprint if basis is not None else _matrix_fingerprint(self.S)

    @classmethod
    def for_basis(cls, basis: ModalBasis, lambda_star: float, spread: float = 0.5,
                  power: int = 2, sign: float = 1.0) -> "ManufacturedFamily":
        return cls(assemble_S(basis), lambda_star, spread, power, sign, basis.m, basis)

    def bundle(self, lam: float) -> OperatorBundle:
        K = self.sign * lam ** (self.power - 1) / self.lambda_star * (self.S * self._E[None, :])
        return OperatorBundle(
            self.m, float(lam), 0.0, self.S, np.zeros_like(self.S), K,
            self._fingerprint, self.basis, None, self.label,
        )

    def expected_mu(self, lam: float, k: int = 0) -> float:
        return self.sign * lam**self.power / self.lambda_star * self.spread**k

    @property
    def critical_lambda(self) -> Optional[float]:
        if self.sign <= 0:
            return None
        return self.lambda_star ** (1.0 / self.power)
