"""
Tests for eigenvalue tracking, the critical point and the bifurcation checks.
"""

import json

import numpy as np
import pytest

from falling_sphere.bifurcation import (
    STATUS_BIFURCATION,
    STATUS_NO_CRITICAL,
    RotletField,
    analyse,
    certify_simplicity,
    criticality_residual,
    default_delta,
    eigenfunction_slice,
    find_critical,
    sb_functional,
    scan_mu,
    sub_block_degeneracy,
    symmetry_breaking,
    transversality,
)
from falling_sphere.baseflow import BaseFlowSolver
from falling_sphere.config import EigenSpec
from falling_sphere.exceptions import ConvergenceError, ValidationError
from falling_sphere.geometry import build_basis, random_points
from falling_sphere.spectrum import (
    EigenPair,
    ManufacturedFamily,
    OperatorBundle,
    assemble_bundle,
    dense_spectrum,
)


DENSE = EigenSpec(count=8, method="dense")


def _spd(n, seed=11):
    B = np.random.default_rng(seed).normal(size=(n, n))
    return B @ B.T / n + np.eye(n)


class _RotatingSource:
    """Complex pair with modulus lam² and one real eigenvalue 0.1 lam."""

    m = None
    label = "rotating"
    constant = False

    def bundle(self, lam):
        K = np.array([[0.0, -lam, 0.0], [lam, 0.0, 0.0], [0.0, 0.0, 0.1]])
        return OperatorBundle.from_matrices(np.eye(3), None, K, lam)


@pytest.fixture(scope="module")
def family():
    return ManufacturedFamily(_spd(6), lambda_star=4.0, spread=0.5)


@pytest.fixture(scope="module")
def physical_bundle(base_flow, basis1):
    return assemble_bundle(base_flow, 1, basis=basis1)


class TestRotletField:
    """Test cases for the closed-form rotlet."""

    def test_stokes_solution(self, rng):
        """Test that the rotlet is harmonic and solenoidal."""
        assert RotletField().stokes_residual(random_points(rng, 50, 1.0, 8.0)) < 1e-12

    def test_trace(self):
        """Test that the rotlet equals e3 x x on the sphere."""
        assert RotletField().trace_defect() < 1e-14

    def test_matches_lifting_field(self, rng):
        """Test that the closed form and the e3 lifting field coincide."""
        assert RotletField().field_agreement(rng) < 1e-13

    def test_energy_and_torque(self):
        """Test ||D(H)||² = 4 pi and torque -8 pi e3."""
        rotlet = RotletField()
        assert rotlet.strain_energy() == pytest.approx(4 * np.pi, rel=1e-12)
        np.testing.assert_allclose(rotlet.torque(), [0.0, 0.0, -8 * np.pi], atol=1e-10)


class TestScan:
    """Test cases for eigenvalue tracking across Galilei numbers."""

    def test_manufactured_scan(self, family):
        """Test that the tracked eigenvalue follows lam² / lam_star."""
        lambdas = [0.0, 0.5, 1.0, 1.5, 2.5, 3.0]
        scan = scan_mu(family, lambdas, eigen=DENSE)
        np.testing.assert_allclose(scan.lambdas, lambdas[1:])
        np.testing.assert_allclose(scan.mus, [lam**2 / 4.0 for lam in lambdas[1:]], rtol=1e-10)
        assert scan.sign_changes() == [(2, 3)]
        assert scan.path_breaks == []
        assert scan.source == "manufactured"

    def test_rows(self, family):
        """Test the exported scan rows."""
        scan = scan_mu(family, [1.0, 2.0], eigen=DENSE)
        lam, m, re, im, gap, residual = scan.rows()[1]
        assert (lam, m, im) == (2.0, -1, 0.0)
        assert re == pytest.approx(1.0)
        assert gap == pytest.approx(0.5)

    def test_complex_crossing(self):
        """Test that a complex pair crossing |mu| = 1 is reported."""
        scan = scan_mu(_RotatingSource(), [0.5, 0.8, 1.2, 1.5], eigen=EigenSpec(count=3, method="dense"))
        assert len(scan.complex_crossings) == 1
        crossing = scan.complex_crossings[0]
        assert (crossing.lam_low, crossing.lam_high) == (0.8, 1.2)
        np.testing.assert_allclose(scan.mus, [0.05, 0.08, 0.12, 0.15])

    def test_needs_lambdas(self, family):
        """Test that a source without a branch needs explicit Galilei numbers."""
        with pytest.raises(ValidationError, match="needs Galilei numbers"):
            scan_mu(family)


class TestFindCritical:
    """Test cases for the secant root finder."""

    def test_from_scan(self, family):
        """Test lam0 = sqrt(lam_star) from a scan bracket."""
        scan = scan_mu(family, [0.5, 1.0, 1.5, 2.5, 3.0], eigen=DENSE)
        critical = find_critical(family, scan, eigen=DENSE)
        assert critical.status == STATUS_BIFURCATION
        assert critical.lam0 == pytest.approx(2.0, rel=1e-8)
        assert critical.pair.mu == pytest.approx(1.0, abs=1e-7)
        assert critical.iterations >= 1

    def test_explicit_bracket(self, family):
        """Test a user-supplied bracket."""
        critical = find_critical(family, bracket=(1.0, 3.0), eigen=DENSE)
        assert critical.lam0 == pytest.approx(2.0, rel=1e-8)

    def test_no_crossing(self):
        """Test that a negative family has no critical point."""
        negative = ManufacturedFamily(_spd(4), 4.0, sign=-1.0)
        scan = scan_mu(negative, [1.0, 2.0, 3.0], eigen=DENSE)
        critical = find_critical(negative, scan, eigen=DENSE)
        assert critical.status == STATUS_NO_CRITICAL
        assert critical.lam0 is None
        assert critical.mu_extrema[1] < 0

    def test_grid_point_at_root(self, family):
        """Test a scan grid that contains the root."""
        scan = scan_mu(family, [1.0, 2.0, 3.0], eigen=DENSE)
        critical = find_critical(family, scan, eigen=DENSE)
        assert critical.status == STATUS_BIFURCATION
        assert critical.lam0 == pytest.approx(2.0, rel=1e-8)

    def test_needs_scan_or_bracket(self, family):
        """Test argument validation."""
        with pytest.raises(ValidationError, match="scan or a bracket"):
            find_critical(family)
        with pytest.raises(ValidationError, match="0 < lo < hi"):
            find_critical(family, bracket=(3.0, 1.0))

    def test_iteration_cap(self):
        """Test that a starved secant iteration raises with its bracket."""
        cubic = ManufacturedFamily(_spd(4), 8.0, power=3)
        with pytest.raises(ConvergenceError, match="did not converge") as info:
            find_critical(cubic, bracket=(1.0, 3.0), eigen=DENSE, max_iterations=1)
        lo, hi = info.value.last_iterate
        assert 1.0 <= lo < hi <= 3.0


class TestSimplicity:
    """Test cases for the simplicity certificate."""

    def test_simple(self, family):
        """Test a simple crossing eigenvalue."""
        pair = dense_spectrum(family.bundle(2.0))[0]
        result = certify_simplicity(pair)
        assert result.outcome == "simple"
        assert result.certified
        assert result.multiplicity == 1
        assert abs(result.normalized_pairing - 1.0) < 1e-10

    def test_defective(self):
        """Test that a Jordan block is not certified."""
        bundle = OperatorBundle.from_matrices(np.eye(2), None, np.array([[1.0, 1.0], [0.0, 1.0]]), 1.0)
        result = certify_simplicity(dense_spectrum(bundle)[0])
        assert result.outcome == "defective"
        assert not result.certified

    def test_multiple(self):
        """Test that a semisimple double eigenvalue is not certified."""
        bundle = OperatorBundle.from_matrices(np.eye(3), None, np.diag([1.0, 1.0, 0.3]), 1.0)
        e0 = np.array([1.0, 0.0, 0.0])
        pair = EigenPair(1.0, e0, e0, 1.0, 0.0, 0.0, 0.0, False, None, 1.0, bundle)
        result = certify_simplicity(pair)
        assert result.outcome == "multiple"
        assert result.multiplicity == 2

    def test_small_gap(self):
        """Test that a nearly double eigenvalue cannot be certified."""
        bundle = OperatorBundle.from_matrices(np.eye(3), None, np.diag([1.0, 1.0 + 1e-7, 0.3]), 1.0)
        result = certify_simplicity(dense_spectrum(bundle)[0], gap_tolerance=1e-6)
        assert result.outcome == "cannot certify"
        assert result.multiplicity == 1

    def test_needs_bundle(self):
        """Test that a pair without its bundle is rejected."""
        e0 = np.array([1.0])
        pair = EigenPair(1.0, e0, e0, 1.0, 1.0, 0.0, 0.0, False)
        with pytest.raises(ValidationError, match="needs the bundle"):
            certify_simplicity(pair)


class TestTransversality:
    """Test cases for the eigenvalue crossing speed."""

    def test_manufactured_speed(self, family):
        """Test mu' = 2 / sqrt(lam_star) by both routes."""
        pair = dense_spectrum(family.bundle(2.0))[0]
        result = transversality(family, 2.0, pair, eigen=DENSE)
        assert result.mu_prime_formula == pytest.approx(1.0, rel=1e-8)
        assert result.mu_prime_fd == pytest.approx(1.0, rel=1e-8)
        assert result.richardson == pytest.approx(1.0, rel=1e-8)
        assert result.transversal
        assert not result.flagged
        assert result.formula_sign == -1

    def test_constant_operator(self):
        """Test that a Galilei-independent operator gives mu' = mu0 / lam0."""
        constant = ManufacturedFamily(_spd(4), 2.0, power=1)
        pair = dense_spectrum(constant.bundle(2.0))[0]
        result = transversality(constant, 2.0, pair, eigen=DENSE)
        assert result.constant_branch
        assert result.mu_prime_formula == pytest.approx(0.5, rel=1e-8)

    def test_default_delta(self):
        """Test the default finite-difference step."""
        assert default_delta(2.0) == pytest.approx(2e-3)
        assert default_delta(1e-5) == pytest.approx(5e-6)


class TestSymmetryBreaking:
    """Test cases for the rotational symmetry-breaking functional."""

    def test_functional_is_lift_row(self, physical_bundle, base_flow, basis1, rng):
        """Test that the functional equals the e3-lift row of the operator."""
        c = rng.normal(size=basis1.size)
        row = basis1.lift_index("omega3")
        expected = (physical_bundle.operator @ c)[row]
        assert sb_functional(basis1.field(c), base_flow.field) == pytest.approx(expected, rel=1e-9, abs=1e-14)

    def test_torque_route_consistency(self, physical_bundle, base_flow, basis1):
        """Test functional = -mu omega3 torque(H) / (2 lam) on a real eigenpair."""
        row = basis1.lift_index("omega3")
        real = [p for p in dense_spectrum(physical_bundle) if p.is_real]
        pair = max(real, key=lambda p: abs(p.mu * p.w1[row]))
        result = symmetry_breaking(pair, base_flow, base_flow.lam)
        assert result.consistency < 1e-6
        assert result.refinement < 1e-6
        assert not result.flagged
        assert result.rotlet_torque == pytest.approx(-8 * np.pi)

    def test_needs_rotational_lift(self, base_flow):
        """Test that a basis without the e3 lift is rejected."""
        bundle = assemble_bundle(base_flow, 1, sector="odd")
        pair = [p for p in dense_spectrum(bundle) if p.is_real][0]
        with pytest.raises(ValidationError, match="no e3 rotational lifting field"):
            symmetry_breaking(pair, base_flow, base_flow.lam)

    def test_sub_blocks_degenerate(self, base_flow):
        """Test that the two reflection blocks of mode 1 share their spectrum."""
        check = sub_block_degeneracy(base_flow, 1, EigenSpec(count=17, method="dense"))
        assert check.degenerate
        assert check.full_multiplicity == 2

    def test_eigenfunction_slice(self, physical_bundle):
        """Test the exported meridional slice."""
        pair = dense_spectrum(physical_bundle)[0]
        rows = eigenfunction_slice(pair, extent=3.0, n1=13, n2=7)
        assert rows.shape[1] == 5
        assert np.all(np.hypot(rows[:, 0], rows[:, 1]) >= 1.0)


class TestBasisScaling:
    """Test cases for invariance under a uniform rescaling of the basis."""

    SCALE = 2.0

    def test_base_flow_invariant(self, base_flow):
        """Test that xi0 does not depend on the member normalization."""
        scaled = BaseFlowSolver(build_basis(0, 2, 4, sector="even", scale=self.SCALE))
        flow = scaled.solve(base_flow.lam)
        assert flow.xi0 == pytest.approx(base_flow.xi0, rel=1e-9)
        assert flow.energy == pytest.approx(base_flow.energy, rel=1e-9)

    def test_spectrum_invariant(self, physical_bundle, base_flow):
        """Test that the mode-1 spectrum does not depend on the member normalization."""
        scaled = assemble_bundle(base_flow, 1, basis=build_basis(1, 2, 4, sector="even", scale=self.SCALE))
        mus = np.array([p.mu for p in dense_spectrum(physical_bundle)])
        scaled_mus = np.array([p.mu for p in dense_spectrum(scaled)])
        assert scaled_mus.shape == mus.shape
        tolerance = 1e-8 * np.max(np.abs(mus))
        for mu in scaled_mus:
            assert np.min(np.abs(mus - mu)) <= tolerance

    def test_critical_point_invariant(self, basis1):
        """Test that lam0 of the closed-form family does not depend on the member normalization."""
        eigen = EigenSpec(count=basis1.size, method="dense")
        found = []
        for basis in (basis1, build_basis(1, 2, 4, sector="even", scale=self.SCALE)):
            family = ManufacturedFamily.for_basis(basis, lambda_star=4.0)
            scan = scan_mu(family, [1.0, 1.5, 2.5, 3.0], eigen=eigen)
            found.append(find_critical(family, scan, eigen=eigen).lam0)
        assert found[0] == pytest.approx(2.0, rel=1e-8)
        assert found[1] == pytest.approx(found[0], rel=1e-9)


class TestAnalyse:
    """Test cases for the full analysis of one mode."""

    def test_manufactured_bifurcation(self):
        """Test the report of a basis-backed manufactured family."""
        source = ManufacturedFamily.for_basis(build_basis(1, 1, 2, sector="even"), 4.0)
        report = analyse(source, [0.5, 1.0, 1.5, 2.5, 3.0], eigen=DENSE)
        assert report.status == STATUS_BIFURCATION
        assert report.lambda0 == pytest.approx(2.0, rel=1e-8)
        fd, formula = report.mu_prime
        assert fd == pytest.approx(1.0, rel=1e-6)
        assert formula == pytest.approx(1.0, rel=1e-6)
        assert report.simplicity.certified
        assert report.symmetry is None
        assert report.criticality_residual < 1e-6
        data = json.loads(json.dumps(report.to_dict()))
        assert data["status"] == STATUS_BIFURCATION
        assert data["mu0"][1] == 0.0

    def test_no_critical_point(self):
        """Test the report when mu stays below 1."""
        source = ManufacturedFamily(_spd(4), 100.0)
        report = analyse(source, [1.0, 2.0, 3.0], eigen=DENSE)
        assert report.status == STATUS_NO_CRITICAL
        assert report.lambda0 is None
        assert report.mu_extrema[1] == pytest.approx(0.09)
        assert report.to_dict()["simplicity"] is None

    def test_complex_crossing_note(self):
        """Test that complex crossings are noted in the report."""
        report = analyse(_RotatingSource(), [0.5, 1.5], eigen=EigenSpec(count=3, method="dense"))
        assert report.complex_crossings
        assert any("complex" in note for note in report.notes)
