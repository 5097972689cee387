"""Tests for the discrete operator, Newton solver, initial guesses and continuation."""
import math

import numpy as np
import pytest

from app.core.errors import CenterOutside, ContinuationStalled, ConvergedToZero
from app.models.domain import Annulus, Disk, Rectangle
from app.models.run import NewtonSettings
from app.services.diagnostics import detect_peaks, energy_check
from app.services.geometry import build_grid
from app.services.radial import shoot
from app.services.solver import (
    BUBBLE_HEIGHT,
    Field,
    apply_laplacian,
    assemble_laplacian,
    continue_in_p,
    first_eigenpair,
    gradient_energy,
    initial_guess,
    multi_bubble_guess,
    newton_solve,
    pairing,
    residual,
    roundoff_floor,
)

PI_SQUARE = Rectangle(corner_min=(0.0, 0.0), corner_max=(math.pi, math.pi))


def _oracle_field(grid, p: float) -> Field:
    sol = shoot(p)
    return Field.from_function(grid, lambda x, y: sol.u(np.hypot(x, y)))


# ---------------------------------------------------------------------------
# Field
# ---------------------------------------------------------------------------


class TestField:
    """Grid functions."""

    def test_rejects_wrong_shape(self, disk_grid) -> None:
        """One value per unknown."""
        with pytest.raises(ValueError):
            Field(disk_grid, np.zeros(3))

    def test_rejects_non_finite(self, disk_grid) -> None:
        """Values are finite."""
        values = np.zeros(disk_grid.n_unknowns)
        values[0] = np.nan
        with pytest.raises(ValueError):
            Field(disk_grid, values)

    def test_sample_at_nodes_and_outside(self, disk_grid) -> None:
        """Interpolation reproduces node values and is zero off the lattice."""
        u = Field.from_function(disk_grid, lambda x, y: 1.0 - x * x - y * y)
        np.testing.assert_allclose(u.sample(disk_grid.nodes[:50]), u.values[:50], atol=1e-14)
        assert u.sample(np.array([[3.0, 3.0]]))[0] == 0.0


# ---------------------------------------------------------------------------
# Operator
# ---------------------------------------------------------------------------


class TestLaplacian:
    """−Δ_h with Shortley-Weller boundary rows."""

    def test_zero_field(self, disk_grid) -> None:
        """−Δ_h 0 = 0."""
        out = apply_laplacian(disk_grid, Field(disk_grid, np.zeros(disk_grid.n_unknowns)))
        assert out.max_norm == 0.0

    def test_rectangle_eigenfunction_second_order(self) -> None:
        """sin x sin y on (0,π)²: −Δ_h u ≈ 2u with error ratio ≈ 4 under halving."""
        errors = []
        for n in (16, 32):
            grid = build_grid(PI_SQUARE, math.pi / n)
            u = Field.from_function(grid, lambda x, y: np.sin(x) * np.sin(y))
            out = apply_laplacian(grid, u)
            errors.append(float(np.abs(out.values / (2.0 * u.values) - 1.0).max()))
        assert 3.5 <= errors[0] / errors[1] <= 4.5

    def test_disk_quadratic_is_exact(self, disk_grid) -> None:
        """−Δ_h(1 − |x|²) = 4 including the cut-cell rows."""
        u = Field.from_function(disk_grid, lambda x, y: 1.0 - x * x - y * y)
        out = apply_laplacian(disk_grid, u)
        np.testing.assert_allclose(out.values, 4.0, atol=1e-6)

    def test_matrix_is_cached(self, disk_grid) -> None:
        """The sparse matrix is assembled once per grid."""
        assert assemble_laplacian(disk_grid) is assemble_laplacian(disk_grid)


class TestResidual:
    """−Δ_h u − (u₊)^p."""

    def test_zero_field(self, disk_grid) -> None:
        """u ≡ 0 has zero residual."""
        r = residual(disk_grid, Field(disk_grid, np.zeros(disk_grid.n_unknowns)), 3.0)
        assert r.max_norm == 0.0

    def test_negative_constant_clamped(self, disk_grid) -> None:
        """A negative constant has zero residual at nodes away from the boundary."""
        r = residual(disk_grid, Field(disk_grid, np.full(disk_grid.n_unknowns, -0.5)), 3.0)
        interior = ~disk_grid.boundary_adjacent
        assert np.abs(r.values[interior]).max() <= 1e-10

    def test_rejects_small_exponent(self, disk_grid) -> None:
        """p > 1."""
        with pytest.raises(ValueError):
            residual(disk_grid, Field(disk_grid, np.zeros(disk_grid.n_unknowns)), 1.0)


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


class TestNewtonSolve:
    """Damped Newton on −Δ_h u = (u₊)^p."""

    def test_zero_guess_converges_to_zero(self, disk_grid) -> None:
        """0 is an exact fixed point and is reported as such."""
        with pytest.raises(ConvergedToZero):
            newton_solve(disk_grid, Field(disk_grid, np.zeros(disk_grid.n_unknowns)), 3.0)

    def test_accepted_solution(self, disk_grid, disk_solution_p3) -> None:
        """Residual within tolerance, positive, nonzero."""
        u = disk_solution_p3
        absA = abs(assemble_laplacian(disk_grid))
        limit = max(1e-10, roundoff_floor(absA, u.values, 3.0))
        assert residual(disk_grid, u, 3.0).max_norm <= limit
        assert u.values.min() >= 0.0
        assert u.max_norm > 1.0

    def test_summation_by_parts(self, disk_grid, disk_solution_p3) -> None:
        """Σ_h|∇_h u|² equals Σ_h u·(−Δ_h u) up to rounding."""
        energy = gradient_energy(disk_grid, disk_solution_p3)
        assert abs(energy - pairing(disk_grid, disk_solution_p3)) <= 1e-10 * energy

    def test_oracle_start_is_quadratic(self, fine_disk_grid) -> None:
        """h = 2/128, p = 10: from the sampled radial solution Newton converges in at most 3 steps."""
        start = _oracle_field(fine_disk_grid, 10.0)
        result = newton_solve(fine_disk_grid, start, 10.0)
        assert result.iterations <= 3
        absA = abs(assemble_laplacian(fine_disk_grid))
        assert result.residual_norm <= max(1e-10, roundoff_floor(absA, result.field.values, 10.0))
        assert result.field.max_norm == pytest.approx(shoot(10.0).height, abs=2e-2)

    def test_rejects_foreign_guess(self, disk_grid) -> None:
        """The guess must live on the solve grid."""
        other = build_grid(Disk(), 2.0 / 32.0)
        with pytest.raises(ValueError):
            newton_solve(disk_grid, Field(other, np.ones(other.n_unknowns)), 3.0)


# ---------------------------------------------------------------------------
# Initial guesses
# ---------------------------------------------------------------------------


class TestInitialGuess:
    """Scaled first eigenfunction and bubble superpositions."""

    def test_rectangle_eigenpair(self) -> None:
        """(0,π)²: λ₁ ≈ 2, φ₁ ≈ sin x sin y, α ≈ 2 at p0 = 2."""
        grid = build_grid(PI_SQUARE, math.pi / 32)
        lam, phi = first_eigenpair(grid)
        assert lam == pytest.approx(2.0, rel=1e-2)
        exact = np.sin(grid.nodes[:, 0]) * np.sin(grid.nodes[:, 1])
        assert np.abs(phi.values - exact / exact.max()).max() < 1e-2
        guess = initial_guess(grid, 2.0)
        assert guess.max_norm == pytest.approx(2.0, rel=1e-2)

    def test_disk_eigenvalue(self, disk_grid) -> None:
        """Unit disk: λ₁ ≈ j₀,₁² = 5.7832 and α = √λ₁ at p0 = 3."""
        lam, phi = first_eigenpair(disk_grid)
        assert lam == pytest.approx(2.404826**2, rel=1e-2)
        assert initial_guess(disk_grid, 3.0).max_norm == pytest.approx(math.sqrt(lam), rel=1e-12)
        assert phi.values.min() > 0.0

    def test_exponent_range(self, disk_grid) -> None:
        """1 < p0 <= 5."""
        with pytest.raises(ValueError):
            initial_guess(disk_grid, 6.0)

    def test_single_bubble_height(self, disk_grid) -> None:
        """A bubble at a node has height √e there."""
        guess = multi_bubble_guess(disk_grid, 50.0, [(0.0, 0.0)])
        assert guess.max_norm == pytest.approx(BUBBLE_HEIGHT, rel=1e-12)
        assert guess.values.min() >= 0.0

    def test_bubble_center_near_boundary(self, disk_grid) -> None:
        """Centers within 2h of the boundary are rejected."""
        with pytest.raises(CenterOutside):
            multi_bubble_guess(disk_grid, 50.0, [(1.0 - disk_grid.h, 0.0)])

    def test_bubble_requires_large_p(self, disk_grid) -> None:
        """p >= 10."""
        with pytest.raises(ValueError):
            multi_bubble_guess(disk_grid, 5.0, [(0.0, 0.0)])


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------


class TestContinuation:
    """Adaptive continuation in p."""

    def test_branch_to_six(self, disk_grid) -> None:
        """h = 2/64, p 2 → 6: completed, checkpoints hit exactly, heights above √e."""
        run = continue_in_p(disk_grid, 2.0, 6.0, checkpoints=[4.3])
        assert run.status == "completed"
        ps = run.p_values
        assert ps[0] == 2.0 and ps[-1] == 6.0
        assert all(b > a for a, b in zip(ps, ps[1:]))
        assert 4.3 in ps
        assert min(step.field.max_norm for step in run.steps) > math.sqrt(math.e)

    def test_coarse_grid_folds_before_ten(self, disk_grid) -> None:
        """h = 2/64 cannot resolve ε₁₀ ≈ 0.02 and the discrete branch stalls below p = 10."""
        run = continue_in_p(disk_grid, 2.0, 10.0)
        assert run.status == "stalled"
        assert isinstance(run.error, ContinuationStalled)
        assert 9.0 < run.p_values[-1] < 10.0

    @pytest.mark.slow
    def test_branch_to_ten(self, fine_disk_grid) -> None:
        """h = 2/128, p 2 → 10: completed, checkpoints hit, heights decreasing beyond 5 and above √e."""
        run = continue_in_p(fine_disk_grid, 2.0, 10.0, checkpoints=[7.3])
        assert run.status == "completed"
        ps = run.p_values
        assert ps[0] == 2.0 and ps[-1] == 10.0
        assert 7.3 in ps
        heights = [step.field.max_norm for step in run.steps if step.p >= 5.0]
        assert all(b < a for a, b in zip(heights, heights[1:]))
        assert min(step.field.max_norm for step in run.steps) > math.sqrt(math.e)

    def test_single_value(self, disk_grid) -> None:
        """p_start = p_end gives one solved value."""
        run = continue_in_p(disk_grid, 3.0, 3.0)
        assert run.p_values == [3.0]
        assert run.initial_guess == "first-eigenfunction"

    def test_warm_up_for_large_start(self, disk_grid) -> None:
        """Starting above p = 5 warms up from p = 2 and records it."""
        run = continue_in_p(disk_grid, 6.0, 6.0)
        assert run.p_values == [6.0]
        assert "warm-up" in run.initial_guess

    def test_field_at_unknown_p(self, disk_grid) -> None:
        """Unreached p values raise KeyError."""
        run = continue_in_p(disk_grid, 3.0, 3.0)
        with pytest.raises(KeyError):
            run.field_at(4.0)

    def test_stall_returns_partial_run(self, disk_grid, disk_solution_p3) -> None:
        """Repeated failures at the step floor stop the run with status stalled."""
        run = continue_in_p(
            disk_grid,
            3.0,
            10.0,
            NewtonSettings(max_iter=1),
            u_start=disk_solution_p3,
            dp_initial=0.5,
            dp_min=0.2,
        )
        assert run.status == "stalled"
        assert run.p_values == [3.0]
        assert isinstance(run.error, ContinuationStalled)
        with pytest.raises(ContinuationStalled):
            run.raise_for_status()

    @pytest.mark.slow
    def test_height_matches_radial_oracle(self) -> None:
        """Unit disk, h = 2/256, p = 10: ‖u‖∞ within 5e-3 of the radial value."""
        grid = build_grid(Disk(), 2.0 / 256.0)
        run = continue_in_p(grid, 2.0, 10.0)
        assert run.field_at(10.0).max_norm == pytest.approx(shoot(10.0).height, abs=5e-3)

    @pytest.mark.slow
    def test_grid_convergence(self) -> None:
        """h 2/128 → 2/256 at p = 10: the max-norm error against the radial solution drops 3-5×."""
        errors = []
        for n in (128, 256):
            grid = build_grid(Disk(), 2.0 / n)
            u = continue_in_p(grid, 2.0, 10.0).field_at(10.0)
            errors.append(float(np.abs(u.values - _oracle_field(grid, 10.0).values).max()))
        assert 3.0 <= errors[0] / errors[1] <= 5.0

    @pytest.mark.slow
    def test_annulus_two_peak_from_bubbles(self) -> None:
        """Annulus 1.5 < |x| < 3.5, p = 10: two bubbles at ±(2.5, 0) converge to a two-peak solution."""
        grid = build_grid(Annulus(r_inner=1.5, r_outer=3.5), 2.0 / 128.0)
        guess = multi_bubble_guess(grid, 10.0, [(2.5, 0.0), (-2.5, 0.0)])
        result = newton_solve(grid, guess, 10.0)
        peaks = detect_peaks(result.field, 10.0)
        assert peaks.k == 2
        xs = sorted(peak.location[0] for peak in peaks.peaks)
        assert xs[0] == pytest.approx(-2.5, abs=0.1)
        assert xs[1] == pytest.approx(2.5, abs=0.1)
        assert peaks.peaks[0].height == pytest.approx(peaks.peaks[1].height, rel=1e-2)
        check = energy_check(result.field, 10.0, k=2)
        assert 1.5 < check.ratio < 3.5
