"""Tests for the Green function backends."""
import math

import numpy as np
import pytest

from app.core.errors import CoincidentPoints, PointOutside
from app.models.domain import Annulus, Disk, Rectangle
from app.services.green import WEIGHT_CACHE_SIZE, CollocationGreen, DiskGreen, GreenEvaluator, RectangleGreen
from app.services.geometry import signed_distance

TWO_PI = 2.0 * math.pi
UNIT_DISK = Disk()
ANNULUS = Annulus(r_inner=0.3, r_outer=1.0)
UNIT_SQUARE = Rectangle(corner_min=(0.0, 0.0), corner_max=(1.0, 1.0))
WIDE = Rectangle(corner_min=(-1.0, 0.0), corner_max=(1.0, 1.0))


@pytest.fixture(scope="module")
def disk_green() -> GreenEvaluator:
    return GreenEvaluator.for_domain(UNIT_DISK)


@pytest.fixture(scope="module")
def annulus_green() -> GreenEvaluator:
    return GreenEvaluator.for_domain(ANNULUS)


def _interior_points(spec, n: int, depth: float, seed: int) -> np.ndarray:
    (x0, y0), (x1, y1) = spec.bounding_box()
    rng = np.random.default_rng(seed)
    pts = rng.uniform((x0, y0), (x1, y1), size=(20 * n, 2))
    return pts[signed_distance(spec, pts) < -depth][:n]


def _separated(spec, n: int, depth: float) -> tuple[np.ndarray, np.ndarray]:
    x = _interior_points(spec, 4 * n, depth, 1)
    y = _interior_points(spec, 4 * n, depth, 2)
    m = min(len(x), len(y))
    keep = np.hypot(*(x[:m] - y[:m]).T) > 0.1
    return x[:m][keep][:n], y[:m][keep][:n]


# ---------------------------------------------------------------------------
# Backend selection and validation
# ---------------------------------------------------------------------------


class TestForDomain:
    """Backend dispatch and argument checks."""

    def test_default_backends(self, disk_green, annulus_green) -> None:
        """Disk → closed form, rectangle → images, annulus → collocation."""
        assert isinstance(disk_green, DiskGreen)
        assert isinstance(GreenEvaluator.for_domain(UNIT_SQUARE), RectangleGreen)
        assert isinstance(annulus_green, CollocationGreen)

    def test_backend_mismatch(self) -> None:
        """Exact backends only accept their own domain."""
        with pytest.raises(ValueError):
            GreenEvaluator.for_domain(ANNULUS, backend="disk_exact")
        with pytest.raises(ValueError):
            GreenEvaluator.for_domain(UNIT_DISK, backend="tabulated")

    def test_point_outside(self, disk_green) -> None:
        """Points on or outside the boundary are rejected."""
        with pytest.raises(PointOutside):
            disk_green.green((1.0, 0.0), (0.0, 0.0))
        with pytest.raises(PointOutside):
            disk_green.robin((2.0, 0.0))

    def test_coincident_points(self, disk_green) -> None:
        """G is singular on the diagonal."""
        with pytest.raises(CoincidentPoints):
            disk_green.green((0.2, 0.1), (0.2, 0.1))
        with pytest.raises(CoincidentPoints):
            disk_green.grad_x_green((0.2, 0.1), (0.2, 0.1))


# ---------------------------------------------------------------------------
# Disk closed form
# ---------------------------------------------------------------------------


class TestDiskGreen:
    """Closed-form values on the unit disk."""

    def test_center_value(self, disk_green) -> None:
        """G(0, (0.5, 0)) = log 2/(2π)."""
        assert disk_green.green((0.0, 0.0), (0.5, 0.0)) == pytest.approx(math.log(2.0) / TWO_PI, rel=1e-14)

    def test_robin_values(self, disk_green) -> None:
        """robin(0) = 0 and robin((0.5, 0)) = log(0.75)/(2π)."""
        assert disk_green.robin((0.0, 0.0)) == pytest.approx(0.0, abs=1e-15)
        assert disk_green.robin((0.5, 0.0)) == pytest.approx(math.log(0.75) / TWO_PI, rel=1e-13)

    def test_symmetry(self, disk_green) -> None:
        """G(x, y) = G(y, x)."""
        x, y = _separated(UNIT_DISK, 100, 0.05)
        np.testing.assert_allclose(disk_green.green(x, y), disk_green.green(y, x), atol=1e-10)

    def test_vanishes_at_boundary(self, disk_green) -> None:
        """Points 1e-3 from the circle see |G| of order 1e-3."""
        theta = np.linspace(0.0, TWO_PI, 32, endpoint=False)
        x = (1.0 - 1e-3) * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        assert np.abs(disk_green.green(x, (0.3, 0.2))).max() <= 1e-3

    def test_diagonal_gradient(self, disk_green) -> None:
        """∇_x H((a,0),(a,0)) = (−a/(2π(1−a²)), 0); ∇robin = 2∇_x H."""
        grad = disk_green.grad_x_regular((0.5, 0.0), (0.5, 0.0))
        np.testing.assert_allclose(grad, [-0.5 / (TWO_PI * 0.75), 0.0], atol=1e-15)
        assert grad[0] == pytest.approx(-0.106103, abs=1e-6)
        np.testing.assert_allclose(disk_green.grad_robin((0.5, 0.0)), 2.0 * grad)
        np.testing.assert_allclose(disk_green.grad_robin((0.0, 0.0)), [0.0, 0.0], atol=1e-15)

    def test_robin_gradient_matches_differences(self, disk_green) -> None:
        """Centered differences of robin agree with grad_robin to 1e-8."""
        x = np.array([0.3, -0.4])
        step = 1e-6
        fd = [
            (disk_green.robin(x + e) - disk_green.robin(x - e)) / (2 * step)
            for e in (np.array([step, 0.0]), np.array([0.0, step]))
        ]
        np.testing.assert_allclose(disk_green.grad_robin(x), fd, atol=1e-8)

    def test_antipodal_pair_derivative(self, disk_green) -> None:
        """∂_t G((t,0), (−a,0)) at t = a = 0.3 equals (1/2π)(a/(1+a²) − 1/(2a))."""
        a = 0.3
        expected = (a / (1 + a * a) - 1 / (2 * a)) / TWO_PI
        grad = disk_green.grad_x_green((a, 0.0), (-a, 0.0))
        assert grad[0] == pytest.approx(expected, rel=1e-12)
        assert grad[1] == pytest.approx(0.0, abs=1e-15)

    def test_robin_decreases_toward_boundary(self, disk_green) -> None:
        """robin strictly decreases along an inward-normal sequence approaching ∂Ω."""
        radii = 1.0 - np.geomspace(0.5, 1e-6, 20)
        values = disk_green.robin(np.stack([radii, np.zeros_like(radii)], axis=1))
        assert np.all(np.diff(values) < 0)


# ---------------------------------------------------------------------------
# Properties shared by every backend
# ---------------------------------------------------------------------------


@pytest.fixture(
    scope="module",
    params=["disk", "square", "wide", "annulus"],
)
def evaluator(request, disk_green, annulus_green) -> GreenEvaluator:
    return {
        "disk": disk_green,
        "square": GreenEvaluator.for_domain(UNIT_SQUARE),
        "wide": GreenEvaluator.for_domain(WIDE),
        "annulus": annulus_green,
    }[request.param]


class TestBackendProperties:
    """Harmonicity, gradients and symmetry for every backend."""

    def test_corrector_is_harmonic(self, evaluator) -> None:
        """5-point Laplacian of H(·, y) at sample points is below 1e-4."""
        spec = evaluator.spec
        depth = 0.25 * spec.feature_size()
        x, y = _separated(spec, 20, depth)
        h = 1e-3
        center = np.asarray(evaluator.regular_part(x, y))
        ring = sum(
            np.asarray(evaluator.regular_part(x + offset, y))
            for offset in (np.array([h, 0.0]), np.array([-h, 0.0]), np.array([0.0, h]), np.array([0.0, -h]))
        )
        assert np.abs((ring - 4.0 * center) / (h * h)).max() <= 1e-4

    def test_gradients_match_differences(self, evaluator) -> None:
        """grad_x_green matches centered differences of green to 1e-6."""
        spec = evaluator.spec
        x, y = _separated(spec, 100, 0.1 * spec.feature_size())
        step = 1e-6
        fd = np.stack(
            [
                (np.asarray(evaluator.green(x + e, y)) - np.asarray(evaluator.green(x - e, y))) / (2 * step)
                for e in (np.array([step, 0.0]), np.array([0.0, step]))
            ],
            axis=1,
        )
        np.testing.assert_allclose(evaluator.grad_x_green(x, y), fd, atol=1e-6)

    def test_symmetry(self, evaluator) -> None:
        """G(x, y) = G(y, x) to the backend's accuracy."""
        spec = evaluator.spec
        x, y = _separated(spec, 50, 0.25 * spec.feature_size())
        tol = max(1e-10, 10.0 * evaluator.accuracy)
        np.testing.assert_allclose(evaluator.green(x, y), evaluator.green(y, x), atol=tol)


# ---------------------------------------------------------------------------
# Rectangle images and collocation
# ---------------------------------------------------------------------------


class TestRectangleGreen:
    """Image series on rectangles."""

    def test_square_center_robin(self) -> None:
        """robin at the center of the unit square is log(conformal radius)/(2π)."""
        radius = math.gamma(0.25) ** 2 / (4.0 * math.pi**1.5)
        g = GreenEvaluator.for_domain(UNIT_SQUARE)
        assert g.robin((0.5, 0.5)) == pytest.approx(math.log(radius) / TWO_PI, abs=1e-9)

    def test_truncation_stable(self) -> None:
        """Orders 30 and 60 give the same center value to 1e-10."""
        low = RectangleGreen(UNIT_SQUARE, max_order=30).robin((0.5, 0.5))
        high = RectangleGreen(UNIT_SQUARE, max_order=60).robin((0.5, 0.5))
        assert low == pytest.approx(high, abs=1e-10)

    def test_vanishes_at_boundary(self) -> None:
        """G is small next to every side, including on a long rectangle."""
        g = GreenEvaluator.for_domain(WIDE)
        near = np.array([[-1.0 + 1e-4, 0.5], [1.0 - 1e-4, 0.3], [0.2, 1e-4], [-0.4, 1.0 - 1e-4]])
        assert np.abs(g.green(near, (0.1, 0.4))).max() <= 1e-3


class TestCollocationGreen:
    """Method of fundamental solutions."""

    def test_reproduces_disk_closed_form(self, disk_green) -> None:
        """Handed a disk, collocation agrees with the closed form."""
        colloc = CollocationGreen(UNIT_DISK)
        assert colloc.accuracy < 1e-6
        x, y = _separated(UNIT_DISK, 50, 0.3)
        np.testing.assert_allclose(colloc.green(x, y), disk_green.green(x, y), atol=1e-6)
        assert colloc.robin((0.5, 0.0)) == pytest.approx(math.log(0.75) / TWO_PI, abs=1e-6)

    def test_annulus_accuracy_recorded(self, annulus_green) -> None:
        """The boundary residual estimate is finite and small."""
        assert np.isfinite(annulus_green.accuracy)
        assert annulus_green.accuracy < 1e-4
        assert len(annulus_green.charge_points) == 2 * 128
        assert len(annulus_green.collocation_points) == 2 * 4 * 128

    def test_weights_cached_per_source(self, annulus_green) -> None:
        """Repeated single-source queries reuse the solved weights."""
        first = annulus_green.weights((0.6, 0.1))
        assert annulus_green.weights((0.6, 0.1)) is first

    def test_weight_cache_is_bounded(self) -> None:
        """Fresh source points evict old ones once the cache is full."""
        g = GreenEvaluator.for_domain(ANNULUS)
        for i in range(WEIGHT_CACHE_SIZE + 50):
            g.weights((0.6 + 1e-5 * i, 0.1))
        info = g.cache_info()
        assert info.currsize == WEIGHT_CACHE_SIZE
        assert info.maxsize == WEIGHT_CACHE_SIZE

    def test_annulus_vanishes_at_both_boundaries(self, annulus_green) -> None:
        """G is small next to the inner and the outer circle."""
        near = np.array([[0.3 + 1e-4, 0.0], [0.0, -(0.3 + 1e-4)], [1.0 - 1e-4, 0.0], [0.0, 1.0 - 1e-4]])
        assert np.abs(annulus_green.green(near, (0.65, 0.0))).max() <= 1e-3
