"""
Run orchestration for falling-sphere.
"""

import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import psutil

from .baseflow import BaseFlow, BaseFlowSolver, Branch, check_axisymmetry, continue_branch
from .bifurcation import (
    STATUS_BIFURCATION,
    STATUS_UNRESOLVED,
    BifurcationReport,
    MuScan,
    RotletField,
    SymmetryBreaking,
    analyse,
    eigenfunction_slice,
    find_critical,
    scan_mu,
    symmetry_breaking,
)
from .config import Resolution, RunConfig
from .exceptions import FallingSphereError, QuadratureError, StoreError, ValidationError
from .forms import (
    assemble_D1,
    assemble_S,
    check_quadrature,
    korn_identity,
    korn_ratio,
    l4_interpolation_bound,
    l4_interpolation_constant,
    lp_norms,
    nonlinear_map,
    recover_force_torque,
    sobolev_constant,
    surface_coupling,
    trace_constant,
)
from .geometry import ModalBasis, extension_bound
from .spectrum import (
    BranchBundleSource,
    BundleAssembler,
    BundleSource,
    ManufacturedFamily,
    leading_eigs,
)
from .store import ResultStore, branch_from_dict, branch_rows, branch_to_dict, write_csv


STOKES_ORACLE_LAMBDA = 1e-3
STOKES_ORACLE_TOLERANCE = 2e-2
IDENTITY_TOLERANCE = 1e-10
ROTLET_TOLERANCE = 1e-8
CONSTANT_TOLERANCE = 1e-9
REFINEMENT_TOLERANCE = 1e-3
SCAN_POINTS = 11


@dataclass(frozen=True)
class IdentityCheck:
    """One row of the verification table."""

    name: str
    measured: str
    residual: float
    tolerance: float
    passed: bool


@dataclass
class VerifyReport:
    fingerprint: str
    checks: List[IdentityCheck] = field(default_factory=list)
    underresolved: bool = False
    elapsed: float = 0.0
    constants: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.underresolved and all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[IdentityCheck]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, residual: float, tolerance: float, measured: str = "") -> None:
        residual = float(residual)
        passed = bool(np.isfinite(residual) and residual <= tolerance)
        self.checks.append(IdentityCheck(name, measured or f"{residual:.3e}", residual, tolerance, passed))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fingerprint": self.fingerprint,
            "passed": self.passed,
            "underresolved": self.underresolved,
            "elapsed": self.elapsed,
            "constants": dict(self.constants),
            "checks": [asdict(c) for c in self.checks],
        }


class FallingSphereSuite:
    """
    Main class for running the falling-sphere analysis.

    Owns the run configuration, the logging setup, a cache of modal bases
    and the result store. Every command needs a started suite; it can be
    used as a context manager for automatic start and stop.
    """

    def __init__(self, config: Optional[RunConfig] = None):
        """
        Initialize a suite.

        Args:
            config: Validated run configuration; defaults apply when omitted
        """
        self.config = config or RunConfig()
        self.is_running = False
        self.logger = logging.getLogger(__name__)
        self.store = ResultStore(self.output_dir, self.config)
        self._bases: Dict[Tuple[int, str, int, int], ModalBasis] = {}
        self._solver: Optional[BaseFlowSolver] = None
        self._started_at: Optional[float] = None
        self._setup_logging()

    def _setup_logging(self) -> None:
        """Set up logging configuration."""
        level = self.config.log_level
        logging.basicConfig(
            level=getattr(logging, level.upper()),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    def start(self) -> None:
        """
        Start the suite.

        Raises:
            FallingSphereError: If already running or startup fails
        """
        if self.is_running:
            raise FallingSphereError("FallingSphereSuite is already running")
        try:
            self.logger.info(f"Starting FallingSphereSuite (config {self.config.fingerprint()[:12]})...")
            self.output_dir.mkdir(parents=True, exist_ok=True)
            self.is_running = True
            self._started_at = time.time()
            self.logger.info("FallingSphereSuite started successfully")
        except OSError as e:
            raise FallingSphereError(f"Failed to start FallingSphereSuite: {e}") from e

    def stop(self) -> None:
        """
        Stop the suite and drop cached bases.

        Raises:
            FallingSphereError: If not running
        """
        if not self.is_running:
            raise FallingSphereError("FallingSphereSuite is not running")
        self.logger.info("Stopping FallingSphereSuite...")
        self._bases.clear()
        self._solver = None
        self.is_running = False
        self._started_at = None
        self.logger.info("FallingSphereSuite stopped successfully")

    def _require_running(self) -> None:
        if not self.is_running:
            raise FallingSphereError("FallingSphereSuite is not running")

    def _get_system_info(self) -> Dict[str, Any]:
        return {
            "platform": platform.platform(),
            "machine": platform.machine(),
            "python_version": platform.python_version(),
            "physical_cores": psutil.cpu_count(logical=False),
            "logical_cores": psutil.cpu_count(),
        }

    def get_status(self) -> Dict[str, Any]:
        """
        Get current status information.

        Returns:
            Dictionary containing status information
        """
        return {
            "is_running": self.is_running,
            "config_fingerprint": self.config.fingerprint(),
            "output_dir": str(self.output_dir),
            "modes": list(self.config.modes),
            "manufactured": self.config.manufactured.enabled,
            "cached_bases": [repr(b) for b in self._bases.values()],
            "uptime": time.time() - self._started_at if self._started_at is not None else 0,
            "system": self._get_system_info(),
        }

    def __enter__(self) -> "FallingSphereSuite":
        """Context manager entry."""
        self.start()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        """Context manager exit."""
        self.stop()

    # ------------------------------------------------------------------
    # Building blocks
    # ------------------------------------------------------------------

    def basis(self, m: int, sector: str = "even") -> ModalBasis:
        """Modal basis of mode ``m`` at the configured resolution, cached."""
        res = self.config.resolution_for(m)
        key = (m, sector, res.L, res.N)
        if key not in self._bases:
            self._bases[key] = self.config.basis(m, sector)
        return self._bases[key]

    def solver(self) -> BaseFlowSolver:
        if self._solver is None:
            tol = self.config.tolerances
            self._solver = BaseFlowSolver(
                self.basis(0),
                tolerance=tol.newton,
                energy_tolerance=tol.energy,
                quadrature_tolerance=tol.quadrature,
            )
        return self._solver

    def load_branch(self) -> Branch:
        """
        Stored base branch of this configuration.

        Raises:
            StoreError: If no branch was stored; run the base command first
            FingerprintMismatchError: If it was computed with other numerics
        """
        if not self.store.has("branch"):
            raise StoreError(
                f"No stored base branch in {self.output_dir}; run 'falling-sphere base' first"
            )
        return branch_from_dict(self.store.get("branch"), self.solver().basis)

    def source(self, m: int) -> BundleSource:
        """Bundle source of mode ``m``: the manufactured family or the stored branch."""
        manufactured = self.config.manufactured
        if manufactured.enabled:
            return ManufacturedFamily.for_basis(
                self.basis(m), manufactured.lambda_star, manufactured.spread, manufactured.power
            )
        assembler = BundleAssembler(self.basis(m), self.config.tolerances.quadrature)
        return BranchBundleSource(self.solver(), assembler, self.load_branch())

    def scan_lambdas(self, source: BundleSource) -> np.ndarray:
        """Galilei numbers of the eigenvalue scan inside the configured range."""
        lo, hi = self.config.lambda_min, self.config.lambda_max
        stored = getattr(source, "lambdas", None)
        if stored is not None:
            lambdas = np.asarray(stored)
            return lambdas[(lambdas >= lo) & (lambdas <= hi)]
        return np.linspace(lo, hi, self.config.step_policy.points or SCAN_POINTS)

    # ------------------------------------------------------------------
    # Commands
    # ------------------------------------------------------------------

    def verify(self) -> VerifyReport:
        """
        Run the identity suite.

        Underresolved quadrature is detected first; the identities are only
        judged on bases that pass the quadrature check.

        Returns:
            VerifyReport with one row per identity
        """
        self._require_running()
        started = time.time()
        tol = self.config.tolerances
        report = VerifyReport(self.config.fingerprint())
        modes = sorted(set(self.config.modes) | {0})
        bases = {m: self.basis(m) for m in modes}

        for m, basis in bases.items():
            try:
                disagreement = check_quadrature(basis, tolerance=tol.quadrature, seed=self.config.seed)
                report.add(f"quadrature m={m}", disagreement, tol.quadrature)
            except QuadratureError as e:
                self.logger.warning(str(e))
                report.add(f"quadrature m={m}", e.disagreement, tol.quadrature)
                report.underresolved = True
        if report.underresolved:
            report.elapsed = time.time() - started
            return report

        rng = np.random.default_rng(self.config.seed)
        for m, basis in bases.items():
            S = assemble_S(basis)
            D1 = assemble_D1(basis)
            scale = max(1.0, float(np.max(np.abs(D1.matrix))))
            report.add(f"D1 skew m={m}", D1.diagnostics["boundary_correction"] / scale, IDENTITY_TOLERANCE)
            samples = rng.normal(size=(100, basis.size))
            quadratic = max(abs(u @ D1.matrix @ u) / (u @ S.matrix @ u) for u in samples)
            report.add(f"u.D1 u m={m}", quadratic, IDENTITY_TOLERANCE)
            report.add(f"surface integral m={m}", surface_coupling(basis, seed=self.config.seed), IDENTITY_TOLERANCE)
            report.add(f"Korn identity m={m}", korn_identity(basis, S, seed=self.config.seed), tol.energy)
            ratios = [korn_ratio(basis, rng.normal(size=basis.size), S) for _ in range(10)]
            violation = max(max(0.0, 2 ** -0.5 - r, r - 2 ** 0.5) for r in ratios)
            report.add(f"Korn bounds m={m}", violation, IDENTITY_TOLERANCE,
                       f"[{min(ratios):.4f}, {max(ratios):.4f}]")
            if m == 0:
                c0 = sobolev_constant(basis, S, seed=self.config.seed)
                c4 = l4_interpolation_constant(basis, S, D1, seed=self.config.seed)
                report.constants.update(
                    sobolev=c0,
                    trace=trace_constant(basis, S),
                    l4_interpolation=c4,
                    extension=extension_bound(self.config.cutoff),
                )
                fields = rng.normal(size=(50, basis.size))
                energies = np.sqrt(np.einsum("ij,jk,ik->i", fields, S.matrix, fields))
                l6 = lp_norms(basis, fields, 6) / energies
                report.add("L6 bound m=0", max(0.0, float(l6.max()) / c0 - 1.0), CONSTANT_TOLERANCE,
                           f"{l6.max():.6f} <= {c0:.6f}")
                l4 = lp_norms(basis, fields, 4) / l4_interpolation_bound(basis, fields, S, D1)
                report.add("L4 interpolation m=0", max(0.0, float(l4.max()) / c4 - 1.0), CONSTANT_TOLERANCE,
                           f"{l4.max():.6f} <= {c4:.6f}")

        solver = self.solver()
        c = rng.normal(size=solver.basis.size)
        orthogonality = abs(c @ nonlinear_map(solver.basis, c, solver.D1, solver.basis.rule))
        report.add("c.N(c)", orthogonality / solver.energy_norm(c) ** 3, IDENTITY_TOLERANCE)

        lam = self.config.lambda_max if self.config.lambda_max > 0 else 0.01
        flow = solver.solve(lam)
        report.add(f"energy equality lam={lam:g}", flow.energy_defect, tol.energy,
                   f"{flow.energy:.10e} vs {lam * flow.xi0:.10e}")
        force, torque = flow.wrench(tol.newton)
        wrench_defect = max(abs(force[0] + 2.0 * lam), abs(force[1]), abs(force[2]), *np.abs(torque))
        report.add("base force -2 lam e1", wrench_defect / max(1.0, 2.0 * lam), ROTLET_TOLERANCE,
                   f"({force[0]:.6e}, {force[1]:.1e}, {force[2]:.1e})")
        axisymmetry = check_axisymmetry(flow, tolerance=IDENTITY_TOLERANCE)
        nonaxial = max((r for mode, r in axisymmetry.residuals.items() if mode != 0), default=0.0)
        report.add("axisymmetry", nonaxial, IDENTITY_TOLERANCE)

        oracle = solver.solve(STOKES_ORACLE_LAMBDA)
        expected = STOKES_ORACLE_LAMBDA / (3.0 * np.pi)
        report.add(f"Stokes xi0 lam={STOKES_ORACLE_LAMBDA:g}", abs(oracle.xi0 - expected) / expected,
                   STOKES_ORACLE_TOLERANCE, f"{oracle.xi0:.8e} vs {expected:.8e}")

        rotlet = RotletField()
        torque_H = rotlet.torque()
        H = rotlet.as_field()
        torque_defect = float(np.max(np.abs(torque_H - np.array([0.0, 0.0, -8.0 * np.pi]))))
        report.add("rotlet torque -8 pi e3", torque_defect, ROTLET_TOLERANCE,
                   f"({torque_H[0]:.1e}, {torque_H[1]:.1e}, {torque_H[2]:.10f})")
        report.add("rotlet force", float(np.max(np.abs(recover_force_torque(H, 0.0)[0]))), ROTLET_TOLERANCE)
        energy_H = rotlet.strain_energy()
        report.add("rotlet ||D(H)||^2 = 4 pi", abs(energy_H - 4.0 * np.pi) / (4.0 * np.pi), ROTLET_TOLERANCE,
                   f"{energy_H:.12f}")

        report.elapsed = time.time() - started
        self.store.put("verify", report.to_dict())
        self.logger.info(
            f"Verification {'passed' if report.passed else 'failed'} in {report.elapsed:.1f} s "
            f"({len(report.failures)} failing identities)"
        )
        return report

    def base(self, lam_min: Optional[float] = None, lam_max: Optional[float] = None) -> Branch:
        """
        Compute the base branch, resuming a stored one.

        Points at or below the last stored Galilei number are not recomputed.

        Raises:
            FingerprintMismatchError: If the stored branch used other numerics
        """
        self._require_running()
        lam_min = self.config.lambda_min if lam_min is None else lam_min
        lam_max = self.config.lambda_max if lam_max is None else lam_max
        existing = self.load_branch() if self.store.has("branch") else None
        if existing is not None:
            self.logger.info(f"Resuming stored branch with {len(existing)} points")
        branch = continue_branch(self.solver(), lam_min, lam_max, self.config.step_policy, existing)
        self.store.put("branch", branch_to_dict(branch))
        write_csv(
            self.output_dir / "base_branch.csv",
            ["lam", "xi0", "energy", "residual"],
            branch_rows(branch),
            self.config.fingerprint(),
        )
        return branch

    def spectrum(self) -> Dict[int, MuScan]:
        """Eigenvalue scans of every configured mode."""
        self._require_running()
        scans: Dict[int, MuScan] = {}
        for m in self.config.modes:
            source = self.source(m)
            scan = scan_mu(source, self.scan_lambdas(source), self.config.eigen, self.config.tolerances)
            rows = scan.rows()
            write_csv(
                self.output_dir / f"spectrum_m{m}.csv",
                ["lam", "m", "re_mu", "im_mu", "gap", "residual"],
                rows,
                self.config.fingerprint(),
            )
            self.store.put(
                "scan",
                {"m": m, "source": scan.source, "rows": [list(r) for r in rows], "path_breaks": scan.path_breaks},
                key=f"m{m}",
            )
            scans[m] = scan
        return scans

    def _refined_lambda0(self, m: int, lam0: float, source: BundleSource) -> Optional[float]:
        """Critical Galilei number with L and N doubled, searched near ``lam0``."""
        refined = self.config.replace(
            resolution=Resolution(2 * self.config.resolution.L, 2 * self.config.resolution.N),
            resolution_by_mode={
                k: Resolution(2 * r.L, 2 * r.N) for k, r in self.config.resolution_by_mode.items()
            },
        )
        fine: BundleSource
        if isinstance(source, ManufacturedFamily):
            fine = ManufacturedFamily.for_basis(
                refined.basis(m), source.lambda_star, source.spread, source.power, source.sign
            )
        else:
            assert isinstance(source, BranchBundleSource)
            solver = BaseFlowSolver.from_config(refined)
            seed = solver.solve(lam0, source.base(lam0))
            branch = Branch()
            branch.append(seed)
            fine = BranchBundleSource(
                solver, BundleAssembler(refined.basis(m), refined.tolerances.quadrature), branch
            )
        bracket = (0.95 * lam0, 1.05 * lam0)
        critical = find_critical(fine, bracket=bracket, eigen=self.config.eigen, tolerances=self.config.tolerances)
        return critical.lam0

    def critical(self, m: int) -> BifurcationReport:
        """
        Bifurcation analysis of mode ``m``, persisted with its plot data.

        Raises:
            StoreError: If no base branch was stored for a physical run
        """
        self._require_running()
        source = self.source(m)
        report = analyse(
            source,
            self.scan_lambdas(source),
            self.config.eigen,
            self.config.tolerances,
            bracket=self.config.bracket,
        )
        fingerprint = self.config.fingerprint()
        if self.config.refinement_gate and report.lambda0 is not None:
            refined = self._refined_lambda0(m, report.lambda0, source)
            tolerance = self.config.tolerances.root if self.config.manufactured.enabled else REFINEMENT_TOLERANCE
            if refined is None or abs(refined - report.lambda0) > tolerance * report.lambda0:
                report.notes.append(f"refinement moved lam0 from {report.lambda0!r} to {refined!r}")
                if report.status == STATUS_BIFURCATION:
                    report.status = STATUS_UNRESOLVED
            else:
                report.notes.append(f"lam0 stable under refinement ({refined!r})")

        write_csv(
            self.output_dir / f"mu_curve_m{m}.csv",
            ["lam", "re_mu", "im_mu", "gap"],
            [(lam, np.real(mu), np.imag(mu), gap) for lam, mu, gap in report.mu_curve],
            fingerprint,
        )
        if report.pair is not None:
            write_csv(
                self.output_dir / f"eigenfunction_m{m}.csv",
                ["x1", "x2", "u1", "u2", "u3"],
                eigenfunction_slice(report.pair),
                fingerprint,
                comment=f"plane x3=0, lam0={report.lambda0!r}",
            )
        payload = report.to_dict()
        self.store.put("report", payload, key=f"m{m}")
        path = self.output_dir / f"report_m{m}.json"
        with path.open("w", encoding="utf-8") as f:
            json.dump({"fingerprint": fingerprint, "report": payload}, f, indent=2, sort_keys=True)
            f.write("\n")
        return report

    def symmetry(self, m: int = 1) -> SymmetryBreaking:
        """
        Re-evaluate the symmetry-breaking functional of a stored critical report.

        Raises:
            StoreError: If no report with a critical point is stored
            ValidationError: For manufactured runs, which carry no base flow
        """
        self._require_running()
        if self.config.manufactured.enabled:
            raise ValidationError("Symmetry breaking needs the physical base flow, not a manufactured family")
        if not self.store.has("report", f"m{m}"):
            raise StoreError(f"No stored report for mode {m}; run 'falling-sphere critical --mode {m}' first")
        stored = self.store.get("report", f"m{m}")
        lam0 = stored.get("lambda0")
        if lam0 is None:
            raise StoreError(f"Stored report of mode {m} has no critical point (status '{stored['status']}')")
        source = self.source(m)
        bundle = source.bundle(lam0)
        pairs = leading_eigs(bundle, 1.0, self.config.eigen.count, self.config.eigen.method,
                             self.config.tolerances.eigen, self.config.eigen.dense_limit)
        real = [p for p in pairs if p.is_real]
        if not real:
            raise ValidationError(f"No real eigenvalue near 1 at lam0={lam0}")
        assert bundle.base is not None
        result = symmetry_breaking(real[0], bundle.base, lam0)
        self.store.put("symmetry", {"m": m, "lambda0": lam0, **asdict(result)}, key=f"m{m}")
        return result


def describe_flow(flow: BaseFlow) -> Dict[str, float]:
    """Scalar summary of a base point."""
    return {
        "lam": flow.lam,
        "xi0": flow.xi0,
        "energy": flow.energy,
        "residual": flow.residual_norm,
        "iterations": flow.iterations,
    }
