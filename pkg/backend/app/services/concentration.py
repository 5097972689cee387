"""Concentration-point system m_i ∇_x H(x_i, x_i) + Σ_{ℓ≠i} m_ℓ ∇_x G(x_i, x_ℓ) = 0."""
import itertools
import math
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.stats import qmc

from app.core.errors import CoincidentPoints, GreenError, NoSolutionFound
from app.core.logging import setup_logging
from app.models.domain import Annulus, Disk
from app.models.results import SQRT_E, Configuration
from app.services.green import GreenEvaluator
from app.services.geometry import signed_distance

logger = setup_logging("concentration")

BOUNDARY_GUARD = 1e-3
FD_STEP = 1e-6
DEDUP_TOL = 1e-6
MIN_SEPARATION = 1e-8
STARTS_PER_POINT = 64
MAX_ITER = 60


def system_residual(cfg: Configuration, g: GreenEvaluator) -> np.ndarray:
    """Per-point residual vectors r_i, shape (k, 2)."""
    pts = np.asarray(cfg.points, dtype=float)
    weights = np.asarray(cfg.weights, dtype=float)
    return _residual(pts, weights, g)


def _residual(pts: np.ndarray, weights: np.ndarray, g: GreenEvaluator) -> np.ndarray:
    k = len(pts)
    diameter = g.spec.diameter
    for i, j in itertools.combinations(range(k), 2):
        if math.dist(pts[i], pts[j]) <= MIN_SEPARATION * diameter:
            raise CoincidentPoints(f"points {i} and {j} coincide", separation=math.dist(pts[i], pts[j]))
    out = weights[:, None] * np.atleast_2d(g.grad_x_regular(pts, pts))
    if k > 1:
        ii, ll = np.nonzero(~np.eye(k, dtype=bool))
        pair = np.atleast_2d(g.grad_x_green(pts[ii], pts[ll]))
        np.add.at(out, ii, weights[ll][:, None] * pair)
    return out


def routh_potential(cfg: Configuration, g: GreenEvaluator) -> float:
    """Σ m_i² H(x_i,x_i) + Σ_{i≠ℓ} m_i m_ℓ G(x_i,x_ℓ); its x_i-gradient is 2 m_i r_i."""
    pts = np.asarray(cfg.points, dtype=float)
    m = np.asarray(cfg.weights, dtype=float)
    total = float(np.sum(m * m * np.atleast_1d(g.robin(pts))))
    k = len(pts)
    if k > 1:
        ii, ll = np.nonzero(~np.eye(k, dtype=bool))
        total += float(np.sum(m[ii] * m[ll] * np.atleast_1d(g.green(pts[ii], pts[ll]))))
    return total


def _escaping(pts: np.ndarray, g: GreenEvaluator) -> bool:
    guard = 2.0 * BOUNDARY_GUARD * g.spec.diameter
    if np.any(signed_distance(g.spec, pts) > -guard):
        return True
    return any(math.dist(a, b) < guard for a, b in itertools.combinations(pts, 2))


def _gauss_newton(
    start: np.ndarray, weights: np.ndarray, g: GreenEvaluator, tol: float
) -> Optional[tuple[np.ndarray, float]]:
    """Damped Gauss-Newton on the stacked residual; None if the iterate escapes or stalls."""
    k = len(start)
    step_fd = FD_STEP * g.spec.diameter
    z = start.reshape(-1).copy()
    F = _residual(z.reshape(k, 2), weights, g).reshape(-1)
    norm = float(np.linalg.norm(F))
    for _ in range(MAX_ITER):
        if np.abs(F).max() <= 1e-3 * tol:
            break
        J = np.empty((2 * k, 2 * k))
        for j in range(2 * k):
            dz = np.zeros(2 * k)
            dz[j] = step_fd
            plus = _residual((z + dz).reshape(k, 2), weights, g).reshape(-1)
            minus = _residual((z - dz).reshape(k, 2), weights, g).reshape(-1)
            J[:, j] = (plus - minus) / (2.0 * step_fd)
        delta = np.linalg.lstsq(J, -F, rcond=1e-10)[0]

        lam = 1.0
        while lam >= 1e-4:
            trial = z + lam * delta
            pts = trial.reshape(k, 2)
            if not _escaping(pts, g):
                try:
                    F_trial = _residual(pts, weights, g).reshape(-1)
                except GreenError:
                    F_trial = None
                if F_trial is not None and np.linalg.norm(F_trial) < norm:
                    break
            lam *= 0.5
        else:
            break
        z, F, norm = trial, F_trial, float(np.linalg.norm(F_trial))

    pts = z.reshape(k, 2)
    max_res = float(np.linalg.norm(F.reshape(k, 2), axis=1).max())
    if max_res > tol or _escaping(pts, g):
        return None
    return pts, max_res


def _rotation_invariant(g: GreenEvaluator) -> bool:
    return isinstance(g.spec, (Disk, Annulus))


def _config_distance(a: np.ndarray, b: np.ndarray, center: Optional[np.ndarray]) -> float:
    """Minimal max-point distance over permutations (and rotations about center, if given)."""
    candidates = [b]
    if center is not None:
        ang_a = math.atan2(*(a[0] - center)[::-1])
        for anchor in b:
            turn = ang_a - math.atan2(*(anchor - center)[::-1])
            rot = np.array([[math.cos(turn), -math.sin(turn)], [math.sin(turn), math.cos(turn)]])
            candidates.append((b - center) @ rot.T + center)
    best = math.inf
    for cand in candidates:
        for perm in itertools.permutations(range(len(a))):
            best = min(best, float(np.hypot(*(a - cand[list(perm)]).T).max()))
    return best


def _starts(g: GreenEvaluator, k: int, n_starts: int, seed: int) -> list[np.ndarray]:
    spec = g.spec
    (x0, y0), (x1, y1) = spec.bounding_box()
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    depth = 4.0 * BOUNDARY_GUARD * spec.diameter
    spacing = 0.05 * spec.diameter
    starts: list[np.ndarray] = []
    current: list[np.ndarray] = []
    for _ in range(200 * n_starts * k):
        pt = qmc.scale(sampler.random(1), [x0, y0], [x1, y1])[0]
        if signed_distance(spec, pt) >= -depth:
            continue
        if any(math.dist(pt, q) < spacing for q in current):
            continue
        current.append(pt)
        if len(current) == k:
            starts.append(np.array(current))
            current = []
            if len(starts) == n_starts:
                break
    return starts


def solve_system(
    k: int,
    g: GreenEvaluator,
    starts: Optional[int] = None,
    weights: Optional[Sequence[float]] = None,
    seed: int = 0,
) -> list[Configuration]:
    """Find distinct solutions of the location system by multi-start Gauss-Newton.

    Args:
        k: Number of points.
        g: Green evaluator of the domain.
        starts: Number of quasi-random starts (default 64·k).
        weights: Point weights (default all √e).
        seed: Seed of the scrambled Halton sequence.

    Returns:
        Configurations with max residual ≤ 1e-8/diameter, distinct up to
        permutation (and rotation on disks and annuli).

    Raises:
        NoSolutionFound: No start converged.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n_starts = starts if starts is not None else STARTS_PER_POINT * k
    if n_starts < 1:
        raise ValueError("starts must be at least 1")
    m = np.full(k, SQRT_E) if weights is None else np.asarray(weights, dtype=float)
    if m.shape != (k,) or np.any(m <= 0):
        raise ValueError("weights must be k positive numbers")
    diameter = g.spec.diameter
    tol = 1e-8 / diameter
    center = np.asarray(g.spec.center, dtype=float) if _rotation_invariant(g) else None

    found: list[tuple[np.ndarray, float]] = []
    converged = 0
    for start in _starts(g, k, n_starts, seed):
        result = _gauss_newton(start, m, g, tol)
        if result is None:
            continue
        converged += 1
        pts, res = result
        if all(_config_distance(pts, other, center) > DEDUP_TOL * diameter for other, _ in found):
            found.append((pts, res))

    logger.info(
        "location system: k=%d starts=%d converged=%d distinct=%d",
        k,
        n_starts,
        converged,
        len(found),
        extra={"k": k},
    )
    if not found:
        raise NoSolutionFound(f"no configuration with k={k} converged from {n_starts} starts", k=k)
    return [
        Configuration(
            points=[(float(x), float(y)) for x, y in pts],
            weights=m.tolist(),
            residual_norm=res,
            green_backend_accuracy=g.accuracy,
        )
        for pts, res in found
    ]


def symmetric_pair_radius(
    g: GreenEvaluator, r_lo: float, r_hi: float, xtol: float = 1e-12
) -> float:
    """Radius of the antipodal equal-weight pair on a disk or annulus, by bisection.

    The radial component of r_1 at the pair {c + (ρ, 0), c − (ρ, 0)} must
    change sign on [r_lo, r_hi].
    """
    if not _rotation_invariant(g):
        raise ValueError("symmetric pairs need a disk or an annulus")
    c = np.asarray(g.spec.center, dtype=float)

    def radial(rho: float) -> float:
        pts = np.array([c + (rho, 0.0), c - (rho, 0.0)])
        return float(_residual(pts, np.full(2, SQRT_E), g)[0, 0])

    f_lo, f_hi = radial(r_lo), radial(r_hi)
    if f_lo * f_hi > 0:
        raise NoSolutionFound(
            f"radial residual keeps its sign on [{r_lo:g}, {r_hi:g}]", r_lo=r_lo, r_hi=r_hi
        )
    return float(bisect(radial, r_lo, r_hi, xtol=xtol))
