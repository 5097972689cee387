"""Dirichlet Green function, regular part, and Robin function of −Δ.

Convention: G(x, y) = −log|x−y|/(2π) + H(x, y), G = 0 on the boundary, and
robin(x) = H(x, x). Three backends share one interface: the closed form on
the disk, a reflected image series on the rectangle, and the method of
fundamental solutions for every other domain.
"""
import math
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Any, Optional

import numpy as np
from scipy.linalg import pinv
from scipy.stats import qmc

from app.core.errors import CoincidentPoints, PointOutside
from app.core.logging import setup_logging
from app.models.domain import Annulus, Disk, DomainSpec, Polygon, Rectangle
from app.services.geometry import signed_distance

logger = setup_logging("green")

TWO_PI = 2.0 * math.pi
FOUR_PI = 4.0 * math.pi
# Source points whose collocation weights are kept per evaluator.
WEIGHT_CACHE_SIZE = 256


def _pairs(x: Any, y: Any) -> tuple[np.ndarray, np.ndarray, bool]:
    """Broadcast x and y to matching (n, 2) arrays; flag whether x was a single point."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    scalar = xa.ndim == 1 and ya.ndim == 1
    xa, ya = np.broadcast_arrays(np.atleast_2d(xa), np.atleast_2d(ya))
    return xa, ya, scalar


def _out(values: np.ndarray, scalar: bool) -> Any:
    return float(values[0]) if scalar else values


def _out_vec(values: np.ndarray, scalar: bool) -> np.ndarray:
    return values[0] if scalar else values


class GreenEvaluator(ABC):
    """Green function evaluator for one domain.

    Every method accepts single points or (n, 2) arrays of points.
    """

    backend: str = ""

    def __init__(self, spec: DomainSpec, accuracy: float) -> None:
        self.spec = spec
        self.accuracy = accuracy

    @classmethod
    def for_domain(cls, spec: DomainSpec, backend: Optional[str] = None, **options: Any) -> "GreenEvaluator":
        """Pick the backend for a domain: exact on disks, images on rectangles, collocation otherwise."""
        if backend is None:
            backend = {Disk: "disk_exact", Rectangle: "rectangle_images"}.get(type(spec), "collocation")
        if backend == "disk_exact":
            if not isinstance(spec, Disk):
                raise ValueError("disk_exact backend requires a disk")
            return DiskGreen(spec)
        if backend == "rectangle_images":
            if not isinstance(spec, Rectangle):
                raise ValueError("rectangle_images backend requires a rectangle")
            return RectangleGreen(spec, **options)
        if backend == "collocation":
            return CollocationGreen(spec, **options)
        raise ValueError(f"unknown Green backend: {backend}")

    # --- backend hooks ---

    @abstractmethod
    def _regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """H at matching (n, 2) point arrays, valid on the diagonal."""

    @abstractmethod
    def _grad_regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """∇_x H at matching (n, 2) point arrays, valid on the diagonal."""

    # --- validation ---

    def _check_inside(self, *arrays: np.ndarray) -> None:
        for pts in arrays:
            depth = signed_distance(self.spec, pts)
            if np.any(depth >= 0):
                bad = pts[np.argmax(depth)]
                raise PointOutside(
                    f"point ({bad[0]:.6g}, {bad[1]:.6g}) is not strictly inside the {self.spec.kind}",
                    distance=float(np.max(depth)),
                )

    def _check_distinct(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dist = np.hypot(x[:, 0] - y[:, 0], x[:, 1] - y[:, 1])
        if np.any(dist == 0):
            raise CoincidentPoints("Green function is singular at x = y")
        return dist

    # --- public API ---

    def green(self, x: Any, y: Any) -> Any:
        xa, ya, scalar = _pairs(x, y)
        self._check_inside(xa, ya)
        dist = self._check_distinct(xa, ya)
        return _out(-np.log(dist) / TWO_PI + self._regular(xa, ya), scalar)

    def regular_part(self, x: Any, y: Any) -> Any:
        xa, ya, scalar = _pairs(x, y)
        self._check_inside(xa, ya)
        return _out(self._regular(xa, ya), scalar)

    def robin(self, x: Any) -> Any:
        xa, _, scalar = _pairs(x, x)
        self._check_inside(xa)
        return _out(self._regular(xa, xa), scalar)

    def grad_x_green(self, x: Any, y: Any) -> np.ndarray:
        xa, ya, scalar = _pairs(x, y)
        self._check_inside(xa, ya)
        dist = self._check_distinct(xa, ya)
        singular = (xa - ya) / (TWO_PI * dist[:, None] ** 2)
        return _out_vec(self._grad_regular(xa, ya) - singular, scalar)

    def grad_x_regular(self, x: Any, y: Any) -> np.ndarray:
        """∇_x H(x, y); on the diagonal this is the first-slot gradient ∇_x H(x, x)."""
        xa, ya, scalar = _pairs(x, y)
        self._check_inside(xa, ya)
        return _out_vec(self._grad_regular(xa, ya), scalar)

    def grad_robin(self, x: Any) -> np.ndarray:
        """∇ robin(x) = 2 ∇_x H(x, x) by symmetry of H."""
        return 2.0 * self.grad_x_regular(x, x)


# --- disk ---


class DiskGreen(GreenEvaluator):
    """Closed form H(x, y) = (1/2π) log(|x − y*||y|/R), y* the inversion of y."""

    backend = "disk_exact"

    def __init__(self, spec: Disk) -> None:
        super().__init__(spec, accuracy=1e-14)
        self._center = np.asarray(spec.center, dtype=float)
        self._radius = spec.radius

    def _quadratic(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xr = x - self._center
        yr = y - self._center
        R2 = self._radius**2
        xx = np.einsum("ij,ij->i", xr, xr)
        yy = np.einsum("ij,ij->i", yr, yr)
        xy = np.einsum("ij,ij->i", xr, yr)
        return xr, yr, xx * yy - 2.0 * R2 * xy + R2 * R2

    def _regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        _, _, Q = self._quadratic(x, y)
        return (0.5 * np.log(Q) - math.log(self._radius)) / TWO_PI

    def _grad_regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        xr, yr, Q = self._quadratic(x, y)
        yy = np.einsum("ij,ij->i", yr, yr)
        return (yy[:, None] * xr - self._radius**2 * yr) / (TWO_PI * Q[:, None])


# --- rectangle ---


def _sinhc(z: np.ndarray) -> np.ndarray:
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z * z / 6.0, np.sinh(safe) / safe)


def _log_ratio(alpha: np.ndarray, alpha_r: np.ndarray, beta: np.ndarray):
    """L = log D(α, β) − log D(α', β), D = cosh β − cos α, with ∂L/∂α-direction and ∂L/∂β.

    Both α and α' move with x₁ at the same rate, so the first derivative is
    sin α/D(α) − sin α'/D(α').
    """
    val = np.empty_like(beta)
    d_a = np.empty_like(beta)
    d_b = np.empty_like(beta)
    near = np.abs(beta) <= 1.0
    if near.any():
        a, ar, b = alpha[near], alpha_r[near], beta[near]
        sh2 = 2.0 * np.sinh(0.5 * b) ** 2
        d1 = sh2 + 2.0 * np.sin(0.5 * a) ** 2
        d2 = sh2 + 2.0 * np.sin(0.5 * ar) ** 2
        val[near] = np.log(d1) - np.log(d2)
        d_a[near] = np.sin(a) / d1 - np.sin(ar) / d2
        d_b[near] = np.sinh(b) * (1.0 / d1 - 1.0 / d2)
    far = ~near
    if far.any():
        a, ar, b = alpha[far], alpha_r[far], beta[far]
        e = np.exp(-np.abs(b))
        sech = 2.0 * e / (1.0 + e * e)
        tanh = np.sign(b) * (1.0 - e * e) / (1.0 + e * e)
        f1 = 1.0 - np.cos(a) * sech
        f2 = 1.0 - np.cos(ar) * sech
        val[far] = np.log(f1) - np.log(f2)
        d_a[far] = sech * (np.sin(a) / f1 - np.sin(ar) / f2)
        d_b[far] = tanh * (1.0 / f1 - 1.0 / f2)
    return val, d_a, d_b


class RectangleGreen(GreenEvaluator):
    """Strip Green function along the short side, reflected images along the long side.

    The strip 0 < x₁ < a has G_s = −(1/4π) log[(cosh β − cos α)/(cosh β − cos α')]
    with α = π(x₁−y₁)/a, α' = π(x₁+y₁)/a, β = π(x₂−y₂)/a. Shells of images
    at y₂ ± 2nb are added until a shell contributes less than ``shell_tol``.
    """

    backend = "rectangle_images"

    def __init__(self, spec: Rectangle, max_order: int = 60, shell_tol: float = 1e-12) -> None:
        super().__init__(spec, accuracy=shell_tol)
        lo = np.asarray(spec.corner_min, dtype=float)
        hi = np.asarray(spec.corner_max, dtype=float)
        width, height = hi - lo
        self._origin = lo
        self._swap = width > height
        self._a, self._b = (height, width) if self._swap else (width, height)
        self.max_order = max_order
        self.shell_tol = shell_tol
        self.order_used = 0

    def _local(self, pts: np.ndarray) -> np.ndarray:
        rel = pts - self._origin
        return rel[:, ::-1] if self._swap else rel

    def _image(self, xl: np.ndarray, y1: np.ndarray, src2: np.ndarray):
        k = math.pi / self._a
        alpha = k * (xl[:, 0] - y1)
        alpha_r = k * (xl[:, 0] + y1)
        beta = k * (xl[:, 1] - src2)
        val, d_a, d_b = _log_ratio(alpha, alpha_r, beta)
        return -val / FOUR_PI, -(k / FOUR_PI) * np.stack([d_a, d_b], axis=1)

    def _direct(self, xl: np.ndarray, yl: np.ndarray):
        """Direct strip term with the −log|x−y|/(2π) singularity removed analytically."""
        k = math.pi / self._a
        alpha = k * (xl[:, 0] - yl[:, 0])
        alpha_r = k * (xl[:, 0] + yl[:, 0])
        beta = k * (xl[:, 1] - yl[:, 1])
        val = np.empty(len(xl))
        grad = np.empty((len(xl), 2))

        far = np.abs(beta) > 1.0
        if far.any():
            lv, d_a, d_b = _log_ratio(alpha[far], alpha_r[far], beta[far])
            dx = xl[far] - yl[far]
            r2 = np.einsum("ij,ij->i", dx, dx)
            val[far] = -lv / FOUR_PI + 0.5 * np.log(r2) / TWO_PI
            grad[far] = -(k / FOUR_PI) * np.stack([d_a, d_b], axis=1) + dx / (TWO_PI * r2[:, None])

        near = ~far
        if near.any():
            a, ar, b = alpha[near], alpha_r[near], beta[near]
            rho2 = a * a + b * b
            S = np.sinc(a / (2.0 * math.pi))
            Sh = _sinhc(0.5 * b)
            weighted = b * b * Sh * Sh + a * a * S * S
            ratio = np.where(rho2 > 0, weighted / np.where(rho2 > 0, rho2, 1.0), 1.0)
            D = 0.5 * weighted
            D_r = 2.0 * np.sinh(0.5 * b) ** 2 + 2.0 * np.sin(0.5 * ar) ** 2
            val[near] = -(2.0 * math.log(k) + np.log(0.5 * ratio)) / FOUR_PI + np.log(D_r) / FOUR_PI

            tiny = rho2 < 1e-10
            safe_D = np.where(tiny, 1.0, D)
            safe_rho2 = np.where(tiny, 1.0, rho2)
            g_a = np.where(tiny, -a / 6.0, np.sin(a) / safe_D - 2.0 * a / safe_rho2)
            g_b = np.where(tiny, b / 6.0, np.sinh(b) / safe_D - 2.0 * b / safe_rho2)
            g_a = g_a - np.sin(ar) / D_r
            g_b = g_b - np.sinh(b) / D_r
            grad[near] = -(k / FOUR_PI) * np.stack([g_a, g_b], axis=1)
        return val, grad

    def _series(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xl = self._local(x)
        yl = self._local(y)
        y1, y2 = yl[:, 0], yl[:, 1]
        val, grad = self._direct(xl, yl)
        v, g = self._image(xl, y1, -y2)
        val, grad = val - v, grad - g

        b = self._b
        order = 0
        for n in range(1, self.max_order + 1):
            shell_val = np.zeros(len(xl))
            shell_grad = np.zeros_like(grad)
            for shift in (2.0 * n * b, -2.0 * n * b):
                v, g = self._image(xl, y1, y2 + shift)
                shell_val += v
                shell_grad += g
                v, g = self._image(xl, y1, -y2 + shift)
                shell_val -= v
                shell_grad -= g
            val += shell_val
            grad += shell_grad
            order = n
            size = max(np.abs(shell_val).max(initial=0.0), np.abs(shell_grad).max(initial=0.0))
            if size < self.shell_tol:
                break
        self.order_used = max(self.order_used, order)
        if self._swap:
            grad = grad[:, ::-1]
        return val, grad

    def _regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._series(x, y)[0]

    def _grad_regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._series(x, y)[1]


# --- collocation ---


def _boundary_samples(spec: DomainSpec, count: int, offset: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per boundary component: (boundary points, points displaced outward by offset)."""
    if isinstance(spec, (Disk, Annulus)):
        c = np.asarray(spec.center, dtype=float)
        theta = 2.0 * math.pi * (np.arange(count) + 0.5) / count
        ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        if isinstance(spec, Disk):
            return [(c + spec.radius * ring, c + (spec.radius + offset) * ring)]
        inner_offset = min(offset, 0.3 * spec.r_inner)
        return [
            (c + spec.r_outer * ring, c + (spec.r_outer + offset) * ring),
            (c + spec.r_inner * ring, c + (spec.r_inner - inner_offset) * ring),
        ]

    if isinstance(spec, Rectangle):
        (x0, y0), (x1, y1) = spec.bounding_box()
        verts = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
    elif isinstance(spec, Polygon):
        verts = np.asarray(spec.vertices, dtype=float)
    else:
        raise TypeError(f"unsupported domain: {type(spec).__name__}")

    edges = np.roll(verts, -1, axis=0) - verts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    perimeter = lengths.sum()
    s = perimeter * (np.arange(count) + 0.5) / count
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    edge = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(verts) - 1)
    frac = (s - cum[edge]) / lengths[edge]
    points = verts[edge] + frac[:, None] * edges[edge]
    # counter-clockwise orientation: outward normal is the edge direction turned right
    normals = np.stack([edges[edge, 1], -edges[edge, 0]], axis=1) / lengths[edge][:, None]
    charges = points + offset * normals
    keep = signed_distance(spec, charges) > 0.5 * offset
    return [(points, charges[keep])]


class CollocationGreen(GreenEvaluator):
    """Method of fundamental solutions for the harmonic corrector.

    H(·, y) ≈ c + Σ_j w_j log|· − ζ_j| with charges ζ_j outside the closure,
    fitted in least squares to log|ξ − y|/(2π) at boundary points ξ.
    """

    backend = "collocation"

    def __init__(
        self,
        spec: DomainSpec,
        charges_per_boundary: int = 128,
        oversampling: int = 4,
        offset_fraction: float = 0.15,
        rcond: float = 1e-12,
    ) -> None:
        offset = offset_fraction * spec.diameter
        n_colloc = oversampling * charges_per_boundary
        colloc = [pts for pts, _ in _boundary_samples(spec, n_colloc, offset)]
        charges = [ch for _, ch in _boundary_samples(spec, charges_per_boundary, offset)]
        self.collocation_points = np.concatenate(colloc)
        self.charge_points = np.concatenate(charges)
        self._matrix_pinv = pinv(self._design(self.collocation_points), rtol=rcond)
        self._cached_weights = lru_cache(maxsize=WEIGHT_CACHE_SIZE)(self._solve_weights)
        super().__init__(spec, accuracy=float("nan"))
        self.accuracy = self._estimate_accuracy(offset)
        logger.info(
            "collocation evaluator ready: %s charges=%d accuracy=%.3e",
            spec.kind,
            len(self.charge_points),
            self.accuracy,
        )

    def _design(self, pts: np.ndarray) -> np.ndarray:
        diff = pts[:, None, :] - self.charge_points[None, :, :]
        kernel = 0.5 * np.log(np.einsum("ijk,ijk->ij", diff, diff))
        return np.hstack([kernel, np.ones((len(pts), 1))])

    def _boundary_data(self, sources: np.ndarray) -> np.ndarray:
        diff = self.collocation_points[:, None, :] - sources[None, :, :]
        return 0.5 * np.log(np.einsum("ijk,ijk->ij", diff, diff)) / TWO_PI

    def _solve_weights(self, x: float, y: float) -> np.ndarray:
        return self._matrix_pinv @ self._boundary_data(np.asarray([[x, y]]))[:, 0]

    def weights(self, y: Any) -> np.ndarray:
        """Charge weights (plus constant) for a single source, LRU-cached per source point."""
        return self._cached_weights(float(y[0]), float(y[1]))

    def cache_info(self):
        return self._cached_weights.cache_info()

    def _weights_for(self, y: np.ndarray) -> np.ndarray:
        if len(y) > 1 and not np.all(y == y[0]):
            return self._matrix_pinv @ self._boundary_data(y)
        w = self.weights(y[0])
        return np.repeat(w[:, None], len(y), axis=1)

    def _regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        W = self._weights_for(y)
        diff = x[:, None, :] - self.charge_points[None, :, :]
        kernel = 0.5 * np.log(np.einsum("ijk,ijk->ij", diff, diff))
        return np.einsum("ij,ji->i", kernel, W[:-1]) + W[-1]

    def _grad_regular(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        W = self._weights_for(y)
        diff = x[:, None, :] - self.charge_points[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", diff, diff)
        return np.einsum("ijk,ji->ik", diff / r2[:, :, None], W[:-1])

    def _estimate_accuracy(self, offset: float, n_sources: int = 16) -> float:
        """Sup of the boundary residual at check points between collocation points."""
        depth = 0.25 * self.spec.feature_size()
        (x0, y0), (x1, y1) = self.spec.bounding_box()
        sampler = qmc.Halton(d=2, scramble=False)
        candidates = qmc.scale(sampler.random(256), [x0, y0], [x1, y1])
        sources = candidates[signed_distance(self.spec, candidates) < -depth][:n_sources]
        if len(sources) == 0:
            return float("nan")
        n_check = 2 * len(self.collocation_points)
        check = np.concatenate([pts for pts, _ in _boundary_samples(self.spec, n_check, offset)])
        W = self._matrix_pinv @ self._boundary_data(sources)
        diff = check[:, None, :] - sources[None, :, :]
        target = 0.5 * np.log(np.einsum("ijk,ijk->ij", diff, diff)) / TWO_PI
        fitted = self._design(check) @ W
        return float(np.abs(fitted - target).max())
