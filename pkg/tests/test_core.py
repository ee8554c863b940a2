"""
Tests for the core FallingSphereSuite functionality.
"""

import json

import pytest

from falling_sphere.bifurcation import STATUS_BIFURCATION, STATUS_NO_CRITICAL
from falling_sphere.config import EigenSpec, ManufacturedSpec, QuadratureSpec, Resolution, StepPolicy
from falling_sphere.core import FallingSphereSuite
from falling_sphere.exceptions import FallingSphereError, StoreError, ValidationError
from falling_sphere.store import read_csv


@pytest.fixture
def manufactured_config(small_config):
    """Manufactured family on a tiny m = 1 basis, crossing at lam0 = 2."""
    return small_config.replace(
        resolution=Resolution(1, 2),
        modes=(1,),
        lambda_min=0.0,
        lambda_max=4.0,
        step_policy=StepPolicy(points=5),
        manufactured=ManufacturedSpec(enabled=True, lambda_star=4.0),
        eigen=EigenSpec(count=8, method="dense"),
    )


class TestFallingSphereSuite:
    """Test cases for FallingSphereSuite class."""

    def test_init_default(self):
        """Test initialization with default config."""
        suite = FallingSphereSuite()
        assert suite.config.modes == (0, 1)
        assert not suite.is_running

    def test_start_stop(self, small_config):
        """Test starting and stopping the suite."""
        suite = FallingSphereSuite(small_config)
        assert not suite.is_running
        suite.start()
        assert suite.is_running
        assert suite.output_dir.is_dir()
        suite.stop()
        assert not suite.is_running

    def test_start_when_already_running(self, small_config):
        """Test starting when already running raises error."""
        suite = FallingSphereSuite(small_config)
        suite.start()
        try:
            with pytest.raises(FallingSphereError, match="already running"):
                suite.start()
        finally:
            suite.stop()

    def test_stop_when_not_running(self, small_config):
        """Test stopping when not running raises error."""
        with pytest.raises(FallingSphereError, match="not running"):
            FallingSphereSuite(small_config).stop()

    def test_command_when_not_running(self, small_config):
        """Test that commands need a started suite."""
        with pytest.raises(FallingSphereError, match="not running"):
            FallingSphereSuite(small_config).base()

    def test_get_status(self, small_config):
        """Test getting status information."""
        with FallingSphereSuite(small_config) as suite:
            suite.basis(1)
            status = suite.get_status()
        assert status["is_running"]
        assert status["config_fingerprint"] == small_config.fingerprint()
        assert status["modes"] == [0, 1]
        assert len(status["cached_bases"]) == 1
        assert status["system"]["logical_cores"] >= 1

    def test_context_manager_usage(self, small_config):
        """Test using the suite as a context manager."""
        with FallingSphereSuite(small_config) as suite:
            assert suite.is_running
        assert not suite.is_running

    def test_bases_are_cached(self, small_config):
        """Test that bases are built once per mode and sector."""
        with FallingSphereSuite(small_config) as suite:
            assert suite.basis(1) is suite.basis(1)
            assert suite.basis(1, "odd") is not suite.basis(1)


class TestCommands:
    """Test cases for the suite commands."""

    def test_verify(self, small_config):
        """Test that the identity suite passes on a resolved basis."""
        with FallingSphereSuite(small_config) as suite:
            report = suite.verify()
            assert suite.store.has("verify")
        assert report.passed, [c.name for c in report.failures]
        names = [c.name for c in report.checks]
        assert "rotlet torque -8 pi e3" in names
        assert "Stokes xi0 lam=0.001" in names
        assert "L6 bound m=0" in names
        assert "L4 interpolation m=0" in names
        assert set(report.constants) == {"sobolev", "trace", "l4_interpolation", "extension"}
        assert all(0 < v < float("inf") for v in report.constants.values())

    def test_verify_underresolved(self, small_config):
        """Test that coarse quadrature stops verification early."""
        config = small_config.replace(quadrature=QuadratureSpec(margin=-15))
        with FallingSphereSuite(config) as suite:
            report = suite.verify()
            assert not suite.store.has("verify")
        assert report.underresolved
        assert not report.passed
        assert all(c.name.startswith("quadrature") for c in report.checks)

    def test_base_and_resume(self, small_config):
        """Test that the base branch is stored and resumed."""
        config = small_config.replace(lambda_max=0.005, step_policy=StepPolicy(points=3))
        with FallingSphereSuite(config) as suite:
            first = suite.base()
        assert len(first) == 3
        data = read_csv(suite.output_dir / "base_branch.csv")
        assert data["columns"] == ["lam", "xi0", "energy", "residual"]
        assert data["fingerprint"] == config.fingerprint()

        extended = config.replace(lambda_max=0.01, step_policy=StepPolicy(points=5))
        with FallingSphereSuite(extended) as suite:
            branch = suite.base()
            assert len(suite.load_branch()) == 5
        assert branch.points[2].lam == pytest.approx(0.005)

    def test_missing_branch(self, small_config):
        """Test that physical commands need a stored branch."""
        with FallingSphereSuite(small_config) as suite:
            with pytest.raises(StoreError, match="run 'falling-sphere base' first"):
                suite.critical(1)

    def test_physical_critical_without_crossing(self, small_config):
        """Test that small Galilei numbers have no critical point."""
        with FallingSphereSuite(small_config) as suite:
            suite.base()
            report = suite.critical(1)
        assert report.status == STATUS_NO_CRITICAL
        assert report.lambda0 is None
        assert (suite.output_dir / "mu_curve_m1.csv").exists()
        assert not (suite.output_dir / "eigenfunction_m1.csv").exists()

    def test_manufactured_critical(self, manufactured_config):
        """Test the closed-form family end to end."""
        with FallingSphereSuite(manufactured_config) as suite:
            report = suite.critical(1)
            assert suite.store.has("report", "m1")
        assert report.status == STATUS_BIFURCATION
        assert report.lambda0 == pytest.approx(2.0, rel=1e-8)
        out = suite.output_dir
        with (out / "report_m1.json").open(encoding="utf-8") as f:
            saved = json.load(f)
        assert saved["fingerprint"] == manufactured_config.fingerprint()
        assert saved["report"]["status"] == STATUS_BIFURCATION
        slice_rows = read_csv(out / "eigenfunction_m1.csv")
        assert slice_rows["columns"] == ["x1", "x2", "u1", "u2", "u3"]

    def test_repeated_runs_are_bit_identical(self, manufactured_config, small_config, tmp_path):
        """Test that the same configuration and seed reproduce every CSV byte for byte."""
        outputs = []
        for name in ("first", "second"):
            with FallingSphereSuite(manufactured_config.replace(output_dir=str(tmp_path / name))) as suite:
                suite.critical(1)
            with FallingSphereSuite(small_config.replace(output_dir=str(tmp_path / name / "base"))) as suite:
                suite.base()
            outputs.append(tmp_path / name)
        first, second = outputs
        for csv in ("mu_curve_m1.csv", "eigenfunction_m1.csv", "base/base_branch.csv"):
            assert (first / csv).read_bytes() == (second / csv).read_bytes()

    def test_refinement_gate(self, manufactured_config):
        """Test that lam0 of the closed-form family is stable under refinement."""
        with FallingSphereSuite(manufactured_config.replace(refinement_gate=True)) as suite:
            report = suite.critical(1)
        assert report.status == STATUS_BIFURCATION
        assert any("stable under refinement" in note for note in report.notes)

    def test_manufactured_spectrum(self, manufactured_config):
        """Test the exported eigenvalue scan."""
        with FallingSphereSuite(manufactured_config) as suite:
            scans = suite.spectrum()
        assert list(scans) == [1]
        data = read_csv(suite.output_dir / "spectrum_m1.csv")
        assert data["columns"] == ["lam", "m", "re_mu", "im_mu", "gap", "residual"]
        assert data["rows"].shape == (4, 6)
        assert data["rows"][1, 2] == pytest.approx(1.0)

    def test_symmetry_needs_physical_run(self, manufactured_config):
        """Test that symmetry breaking is refused for the closed-form family."""
        with FallingSphereSuite(manufactured_config) as suite:
            with pytest.raises(ValidationError, match="physical base flow"):
                suite.symmetry(1)

    def test_symmetry_needs_report(self, small_config):
        """Test that symmetry breaking needs a stored report."""
        with FallingSphereSuite(small_config) as suite:
            with pytest.raises(StoreError, match="No stored report for mode 1"):
                suite.symmetry(1)
