"""
Tests for the axisymmetric base branch.
"""

import numpy as np
import pytest

from falling_sphere.baseflow import (
    BaseFlowSolver,
    Branch,
    check_axisymmetry,
    continue_branch,
    solve_base,
)
from falling_sphere.config import StepPolicy
from falling_sphere.exceptions import (
    ConvergenceError,
    FingerprintMismatchError,
    ValidationError,
)
from falling_sphere.geometry import build_basis


class TestBaseFlowSolver:
    """Test cases for the Newton solver."""

    def test_zero_galilei_number(self, solver):
        """Test that lam = 0 gives the liquid at rest."""
        flow = solver.solve(0.0)
        assert flow.xi0 == 0.0
        assert flow.iterations == 0
        np.testing.assert_array_equal(flow.coeffs, np.zeros(solver.basis.size))

    @pytest.mark.parametrize("lam", [1e-4, 1e-3, 1e-2])
    def test_stokes_limit(self, solver, lam):
        """Test xi0 = lam / (3 pi) at small Galilei numbers."""
        flow = solve_base(solver, lam)
        assert flow.xi0 == pytest.approx(lam / (3 * np.pi), rel=1e-3)

    @pytest.mark.parametrize("lam", np.linspace(0.005, 0.05, 10))
    def test_energy_equality(self, solver, lam):
        """Test ||D(v0)||² = lam xi0 along the branch."""
        flow = solver.solve(float(lam))
        assert flow.energy_defect < 1e-8
        assert flow.xi0 > 0

    def test_quadratic_convergence(self, solver):
        """Test that Newton's method converges in a few iterations."""
        flow = solver.solve(0.05)
        assert flow.iterations <= 6
        assert flow.residual_history[-1] < flow.residual_history[0]

    def test_base_force_balance(self, base_flow):
        """Test that the liquid pushes the sphere with -2 lam e1 and no torque."""
        force, torque = base_flow.wrench()
        np.testing.assert_allclose(force, [-2 * base_flow.lam, 0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(torque, np.zeros(3), atol=1e-9)

    def test_negative_galilei_number(self, solver):
        """Test that negative Galilei numbers are rejected."""
        with pytest.raises(ValidationError, match="non-negative"):
            solver.solve(-1.0)

    def test_wrong_guess_shape(self, solver):
        """Test that malformed initial guesses are rejected."""
        with pytest.raises(ValidationError, match="Initial guess"):
            solver.solve(0.01, np.zeros(3))

    def test_iteration_cap(self, basis0):
        """Test that a starved Newton iteration reports the last iterate."""
        starved = BaseFlowSolver(basis0, tolerance=1e-30, max_iterations=1)
        with pytest.raises(ConvergenceError, match="did not converge") as info:
            starved.solve(0.05)
        assert info.value.last_iterate.shape == (basis0.size,)
        assert len(info.value.residual_history) == 2

    def test_needs_axisymmetric_basis(self, basis1):
        """Test that the solver refuses a mode-1 basis."""
        with pytest.raises(ValidationError, match="m = 0 basis"):
            BaseFlowSolver(basis1)

    def test_rejects_rotational_lifts(self):
        """Test that a swirling basis is refused."""
        with pytest.raises(ValidationError, match="rotational lifts"):
            BaseFlowSolver(build_basis(0, 2, 3, sector="full"))

    def test_coarse_guess_embeds(self, solver, base_flow):
        """Test that a coarse solution seeds a finer solve."""
        fine = BaseFlowSolver(build_basis(0, 4, 8, sector="even"))
        flow = fine.solve(base_flow.lam, base_flow)
        assert flow.iterations <= 4
        assert flow.xi0 == pytest.approx(base_flow.xi0, rel=1e-6)
        assert flow.energy == pytest.approx(base_flow.energy, rel=1e-6)


class TestContinuation:
    """Test cases for branch continuation."""

    def test_uniform_grid(self, solver):
        """Test the fixed-grid policy."""
        branch = continue_branch(solver, 0.0, 0.02, StepPolicy(points=5))
        np.testing.assert_allclose(branch.lambdas, np.linspace(0.0, 0.02, 5))
        assert not branch.truncated
        assert np.all(np.diff(branch.xi0s) > 0)

    def test_resume(self, solver):
        """Test that a stored branch is extended without recomputation."""
        branch = continue_branch(solver, 0.0, 0.01, StepPolicy(points=3))
        first = list(branch.points)
        continue_branch(solver, 0.0, 0.02, StepPolicy(points=5), branch)
        assert len(branch) == 5
        assert branch.points[:3] == first
        np.testing.assert_allclose(branch.lambdas[-1], 0.02)

    def test_adaptive_steps(self, solver):
        """Test that adaptive steps reach the end point."""
        policy = StepPolicy(initial=0.004, min_step=1e-6, max_step=0.01, points=None)
        branch = continue_branch(solver, 0.0, 0.02, policy)
        assert branch.lambdas[-1] == pytest.approx(0.02)
        assert max(branch.steps) <= 0.01 + 1e-15

    def test_reversed_range(self, solver):
        """Test that reversed ranges are rejected."""
        with pytest.raises(ValidationError, match="lies below its start"):
            continue_branch(solver, 0.02, 0.01)

    def test_derivatives(self, solver):
        """Test the finite-difference tangent against the Newton tangent."""
        branch = continue_branch(solver, 0.0, 0.02, StepPolicy(points=9))
        first, second = branch.derivatives()
        mid = branch.points[4]
        np.testing.assert_allclose(first[4], solver.tangent(mid), rtol=1e-3, atol=1e-8)
        assert second.shape == first.shape


class TestBranch:
    """Test cases for the branch container."""

    def test_increasing_lambdas(self, base_flow):
        """Test that points must be appended in increasing order."""
        branch = Branch()
        branch.append(base_flow)
        with pytest.raises(ValidationError, match="must increase"):
            branch.append(base_flow)

    def test_shared_basis(self, base_flow):
        """Test that a point on a different basis is refused."""
        other = BaseFlowSolver(build_basis(0, 2, 3, sector="even")).solve(0.02)
        branch = Branch()
        branch.append(base_flow)
        with pytest.raises(FingerprintMismatchError, match="share one basis"):
            branch.append(other)

    def test_nearest(self, solver):
        """Test nearest-point lookup."""
        branch = continue_branch(solver, 0.0, 0.02, StepPolicy(points=3))
        assert branch.nearest(0.011).lam == pytest.approx(0.01)

    def test_empty_nearest(self):
        """Test lookup on an empty branch."""
        with pytest.raises(ValidationError, match="empty"):
            Branch().nearest(0.0)


class TestAxisymmetry:
    """Test cases for the full-residual symmetry check."""

    def test_base_flow_is_axisymmetric(self, base_flow):
        """Test that nonaxisymmetric residual blocks vanish."""
        diagnostics = check_axisymmetry(base_flow)
        assert diagnostics.passed
        assert max(abs(t) for t in diagnostics.torque) < 1e-9

    def test_detects_nonaxisymmetric_noise(self, base_flow, basis1, rng):
        """Test that an added mode-1 perturbation is detected."""
        noise = basis1.field(1e-3 * rng.normal(size=basis1.size))
        diagnostics = check_axisymmetry(base_flow, noise=noise)
        assert not diagnostics.passed
        assert diagnostics.residuals[1] > diagnostics.tolerance
