"""The Liouville bubble U(x) = −2 log(1 + |x|²/8) and its integrals."""
import math
from typing import Any

import numpy as np
from scipy.integrate import quad

TOTAL_MASS = 8.0 * math.pi
TOTAL_LOG_MOMENT = 12.0 * math.pi * math.log(2.0)


def _sq_norm(x: Any) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    return pts[..., 0] ** 2 + pts[..., 1] ** 2


def eval_U(x: Any) -> np.ndarray | float:
    """Evaluate U at a point or an array of points of shape (..., 2)."""
    value = -2.0 * np.log1p(_sq_norm(x) / 8.0)
    return float(value) if np.ndim(value) == 0 else value


def eval_U_radial(s: Any) -> np.ndarray | float:
    """U as a function of |x|."""
    s = np.asarray(s, dtype=float)
    value = -2.0 * np.log1p(s * s / 8.0)
    return float(value) if value.ndim == 0 else value


def exp_U(x: Any) -> np.ndarray | float:
    """e^U = (1 + |x|²/8)^{−2}."""
    value = (1.0 + _sq_norm(x) / 8.0) ** -2
    return float(value) if np.ndim(value) == 0 else value


def mass_within(radius: float) -> float:
    """∫_{|z| ≤ radius} e^U dz in closed form; equals 4π at radius √8."""
    a = radius * radius / 8.0
    return TOTAL_MASS * a / (1.0 + a)


def _mass_tail(R: float) -> float:
    return TOTAL_MASS / (1.0 + R * R / 8.0)


def _log_moment_tail(R: float) -> float:
    a = R * R / 8.0
    return 4.0 * math.pi * (math.log(8.0 * a) / (1.0 + a) - math.log(a / (1.0 + a)))


def mass_integrals(R_max: float = 100.0, tol: float = 1e-10) -> tuple[float, float]:
    """Mass ∫ e^U and log-moment ∫ log|z| e^U over the plane.

    Both integrals are computed by radial quadrature on [0, R_max] and closed
    with the exact tail beyond R_max.

    Args:
        R_max: Quadrature cutoff, at least 100.
        tol: Absolute quadrature tolerance, at most 1e-8.

    Returns:
        (mass, log_moment), approximately (8π, 12π log 2).
    """
    if R_max < 100:
        raise ValueError("R_max must be at least 100")
    if not 0 < tol <= 1e-8:
        raise ValueError("tol must lie in (0, 1e-8]")

    def density(s: float) -> float:
        return 2.0 * math.pi * s / (1.0 + s * s / 8.0) ** 2

    breaks = [b for b in (1.0, 10.0) if b < R_max]
    mass_core, _ = quad(density, 0.0, R_max, epsabs=tol, epsrel=tol, limit=400, points=breaks)
    log_core, _ = quad(
        lambda s: math.log(s) * density(s) if s > 0 else 0.0,
        0.0,
        R_max,
        epsabs=tol,
        epsrel=tol,
        limit=400,
        points=breaks,
    )
    return mass_core + _mass_tail(R_max), log_core + _log_moment_tail(R_max)


def liouville_residual(x: Any, step: float = 1e-4) -> float:
    """Centered-difference value of ΔU + e^U at a point (zero for the exact bubble)."""
    x0, y0 = (float(c) for c in np.asarray(x, dtype=float))
    center = eval_U((x0, y0))
    lap = (
        eval_U((x0 + step, y0))
        + eval_U((x0 - step, y0))
        + eval_U((x0, y0 + step))
        + eval_U((x0, y0 - step))
        - 4.0 * center
    ) / (step * step)
    return lap + exp_U((x0, y0))
