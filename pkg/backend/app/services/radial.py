"""Shooting solver for the radial Lane-Emden equation on the disk.

The normalized problem v'' + v'/s + (v₊)^p = 0, v(0) = 1, v'(0) = 0 is
integrated in the log variable t = log s with q = s·v', which keeps the
step size uniform across the many decades between the bubble core and
the first zero r₀. The unit-disk solution follows from the scaling
u(ρ) = r₀^{2/(p−1)} v(r₀ρ).
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from app.core.errors import NoZeroFound
from app.core.logging import setup_logging
from app.models.results import Decomposition

logger = setup_logging("radial")

SERIES_START = 1e-3
# State: v, q, ∫q² dt, ∫s²v^{p+1} dt, ∫s²v^p dt, ∫t·s²v^p dt
_V, _Q, _GRAD, _POW1, _POW, _LOGPOW = range(6)


def _weighted_power(t: float, v: float, p: float) -> float:
    if v <= 0:
        return 0.0
    return math.exp(min(2.0 * t + p * math.log(v), 700.0))


def _rhs(t: float, y: np.ndarray, p: float) -> list[float]:
    v, q = y[_V], y[_Q]
    wp = _weighted_power(t, v, p)
    return [q, -wp, q * q, wp * max(v, 0.0), wp, t * wp]


def _series(s: float, p: float) -> np.ndarray:
    """State at small s from v = 1 − s²/4 + p s⁴/64."""
    s2 = s * s
    v = 1.0 - s2 / 4.0 + p * s2 * s2 / 64.0
    q = -s2 / 2.0 + p * s2 * s2 / 16.0
    log_s = math.log(s)
    return np.array(
        [
            v,
            q,
            s2 * s2 / 16.0,
            s2 / 2.0 - (p + 1.0) * s2 * s2 / 16.0,
            s2 / 2.0 - p * s2 * s2 / 16.0,
            s2 / 2.0 * log_s - s2 / 4.0,
        ]
    )


@dataclass(frozen=True, eq=False)
class RadialSolution:
    """Normalized radial profile with its first zero and accumulated integrals."""

    p: float
    r0: float
    s0: float
    dense: Any
    integrals: np.ndarray

    # --- normalized profile ---

    def _state(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.log(np.clip(s, self.s0, self.r0))
        return self.dense(t)

    def v(self, s: Any) -> np.ndarray:
        """Normalized profile v(s), zero beyond r₀."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        small = s < self.s0
        s2 = s[small] ** 2
        out[small] = 1.0 - s2 / 4.0 + self.p * s2 * s2 / 64.0
        mid = (~small) & (s < self.r0)
        if mid.any():
            out[mid] = self._state(s[mid])[_V]
        return out

    def dv(self, s: Any) -> np.ndarray:
        """v'(s) = q/s inside (0, r₀)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        small = s < self.s0
        out[small] = -s[small] / 2.0 + self.p * s[small] ** 3 / 16.0
        mid = (~small) & (s <= self.r0)
        if mid.any():
            out[mid] = self._state(s[mid])[_Q] / s[mid]
        return out

    def _cumulative(self, s: float) -> np.ndarray:
        """Integrals accumulated from 0 to s (s ≤ r₀)."""
        if s <= self.s0:
            return _series(max(s, 1e-300), self.p)
        if s >= self.r0:
            return self.integrals
        return self._state(np.array([s]))[:, 0]

    # --- unit disk ---

    @property
    def height(self) -> float:
        """M(p) = ‖u_p‖∞ on the unit disk."""
        self._require_superlinear()
        return self.r0 ** (2.0 / (self.p - 1.0))

    @property
    def log_eps(self) -> float:
        """log ε_p = −½ log p − log r₀ for the unit-disk peak."""
        return -0.5 * math.log(self.p) - math.log(self.r0)

    @property
    def energy(self) -> float:
        """E(p) = p∫|∇u_p|² on the unit disk."""
        self._require_superlinear()
        return 2.0 * math.pi * self.p * self.height**2 * self.integrals[_GRAD]

    @property
    def energy_from_power(self) -> float:
        """p∫u_p^{p+1}, equal to the energy by integration by parts."""
        self._require_superlinear()
        return 2.0 * math.pi * self.p * self.height**2 * self.integrals[_POW1]

    def u(self, rho: Any) -> np.ndarray:
        """Unit-disk solution at radius rho."""
        return self.height * self.v(self.r0 * np.asarray(rho, dtype=float))

    def w(self, s: Any) -> np.ndarray:
        """Rescaled profile w_p(s) = p(v(s/√p) − 1), independent of r₀."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        sigma = s / math.sqrt(self.p)
        out = self.p * (self.v(sigma) - 1.0)
        small = sigma < self.s0
        s2 = s[small] ** 2
        out[small] = -s2 / 4.0 + s2 * s2 / 64.0
        return out

    def decomposition(self, r: float) -> Decomposition:
        """Split u(0) = A + B + C + tail for the centered unit-disk peak.

        A vanishes because H(0, ·) ≡ 0 on the unit disk. The identity holds to
        integration accuracy for every r in (0, 1).
        """
        if not 0 < r < 1:
            raise ValueError("decomposition radius must lie in (0, 1)")
        M = self.height
        p = self.p
        inner = self._cumulative(r * self.r0)
        mass = 2.0 * math.pi * p * inner[_POW]
        B = -M * (inner[_LOGPOW] + 0.5 * math.log(p) * inner[_POW])
        C = -M * self.log_eps / (2.0 * math.pi * p) * mass
        log_r0 = math.log(self.r0)
        total = self.integrals
        tail = M * (
            log_r0 * (total[_POW] - inner[_POW]) - (total[_LOGPOW] - inner[_LOGPOW])
        )
        return Decomposition(
            radius=r,
            A=0.0,
            B=float(B),
            C=float(C),
            tail=float(tail),
            mass=float(mass),
            m_est=math.exp(0.5 * C / M),
            identity_defect=float(abs(M - (B + C + tail)) / M),
        )

    def _require_superlinear(self) -> None:
        if not self.p > 1:
            raise ValueError("height and energy are defined for p > 1 only")


@lru_cache(maxsize=128)
def shoot(p: float, tol: float = 1e-10) -> RadialSolution:
    """Integrate the normalized radial problem to its first zero.

    Args:
        p: Exponent, p >= 1.
        tol: Relative accuracy for r₀, in (0, 1e-8].

    Raises:
        NoZeroFound: v stays positive up to the radius cap e^{max(p, 2)}.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if not 0 < tol <= 1e-8:
        raise ValueError("tol must lie in (0, 1e-8]")
    s0 = SERIES_START / math.sqrt(p)
    t0 = math.log(s0)
    t_cap = max(p, 2.0)

    def crossing(t: float, y: np.ndarray, p: float) -> float:
        return y[_V]

    crossing.terminal = True  # type: ignore[attr-defined]
    crossing.direction = -1  # type: ignore[attr-defined]

    sol = solve_ivp(
        _rhs,
        (t0, t_cap),
        _series(s0, p),
        method="DOP853",
        args=(p,),
        events=crossing,
        dense_output=True,
        rtol=max(1e-3 * tol, 1e-13),
        atol=1e-14,
    )
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise NoZeroFound(f"no zero of v below radius e^{t_cap:g} at p={p}", p=p)
    t_zero = float(sol.t_events[0][0])
    r0 = math.exp(t_zero)
    logger.debug("radial shot", extra={"p": p, "residual": float(sol.y_events[0][0][_V])})
    return RadialSolution(
        p=float(p), r0=r0, s0=s0, dense=sol.sol, integrals=np.asarray(sol.y_events[0][0], dtype=float)
    )


def disk_quantities(p: float) -> tuple[float, float]:
    """(M, E) for the unit disk: peak height and p∫|∇u_p|²."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    sol = shoot(float(p))
    return sol.height, sol.energy


def rescaled_profile(p: float, radii: Sequence[float]) -> list[float]:
    """w_p(s) = p(u(ε_p s) − M)/M at the given radii."""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii < 0):
        raise ValueError("radii must be non-negative")
    return shoot(float(p)).w(radii).tolist()


def oracle_table(p_values: Sequence[float]) -> list[dict[str, float]]:
    """Rows (p, M, E, r0) for extrapolation and CSV export."""
    rows = []
    for p in p_values:
        sol = shoot(float(p))
        rows.append({"p": float(p), "M": sol.height, "E": sol.energy, "r0": sol.r0})
    return rows
