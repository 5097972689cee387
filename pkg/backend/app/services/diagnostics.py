"""Asymptotic diagnostics of computed solutions.

Peaks and their ε-scales, energy quantization, rescaled profiles against the
Liouville bubble, off-peak behavior against the Green superposition, decay
bounds, and the Green-representation split of each peak value.
"""
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter

from app.core.errors import (
    AnnulusUnresolved,
    BallOverlap,
    DiagnosticsError,
    EmptyTestSet,
    GreenError,
    IllConditionedFit,
    NoPeaks,
    PeakUnresolved,
    QuadratureUnresolved,
)
from app.core.logging import setup_logging
from app.models.results import (
    SQRT_E,
    Configuration,
    Decomposition,
    DiagnosticsReport,
    Peak,
    PeakBounds,
    PeakSet,
)
from app.models.run import DiagnosticsToggles
from app.services.concentration import system_residual
from app.services.geometry import signed_distance
from app.services.green import GreenEvaluator
from app.services.liouville import eval_U
from app.services.solver import Field, bubble_scale, gradient_energy, positive_power

logger = setup_logging("diagnostics")

BUBBLE_ENERGY = 8.0 * math.pi * math.e
ENVELOPE_RADIUS = 2.0
# Mean of log|z| over the unit square centered at the origin.
LOG_CELL_MEAN = -1.0611751
MIN_BALL_NODES = 25


# --- 1. Peaks ---


def _refine(lattice: np.ndarray, iy: int, ix: int) -> tuple[float, float, float]:
    """Separable quadratic fit on the 3×3 stencil: (dx, dy) in units of h, and peak value."""
    f0 = lattice[iy, ix]
    offsets = []
    lift = 0.0
    for lo, hi in (
        (lattice[iy, ix - 1], lattice[iy, ix + 1]),
        (lattice[iy - 1, ix], lattice[iy + 1, ix]),
    ):
        curv = lo - 2.0 * f0 + hi
        if curv < 0:
            shift = float(np.clip(0.5 * (lo - hi) / curv, -0.5, 0.5))
            lift += 0.5 * (hi - lo) * shift + 0.5 * curv * shift * shift
        else:
            shift = 0.0
        offsets.append(shift)
    return offsets[0], offsets[1], float(f0 + lift)


def detect_peaks(
    u: Field,
    p: float,
    height_floor: float = 1.0,
    cluster_radius: Optional[float] = None,
) -> PeakSet:
    """Strict local maxima above the floor, clustered greedily by height.

    Args:
        u: Accepted solution.
        p: Exponent the solution belongs to.
        height_floor: Minimum peak height.
        cluster_radius: Exclusion radius; peaks end up more than twice this
            apart. Defaults to max(5h, 0.05·diameter).

    Raises:
        NoPeaks: Nothing exceeds the floor.
    """
    grid = u.grid
    if height_floor <= 0:
        raise ValueError("height_floor must be positive")
    radius = cluster_radius if cluster_radius is not None else max(5.0 * grid.h, 0.05 * grid.spec.diameter)
    if radius <= 4.0 * grid.h:
        raise ValueError("cluster_radius must exceed 4h")

    lattice = np.pad(u.lattice(), 1)
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neighbors = maximum_filter(lattice, footprint=footprint, mode="constant", cval=0.0)
    strict = (lattice > neighbors) & (lattice > height_floor)
    candidates = np.argwhere(strict)
    if len(candidates) == 0:
        raise NoPeaks(f"no local maximum above {height_floor:g} (max {u.max_norm:.6g})", p=p)
    order = np.argsort(-lattice[strict], kind="stable")

    accepted: list[Peak] = []
    for iy, ix in candidates[order]:
        dx, dy, height = _refine(lattice, iy, ix)
        # padded lattice is offset by one node
        loc = (float(grid.xs[ix - 1] + dx * grid.h), float(grid.ys[iy - 1] + dy * grid.h))
        if any(math.dist(loc, peak.location) <= 2.0 * radius for peak in accepted):
            continue
        accepted.append(
            Peak(
                location=loc,
                height=height,
                eps=bubble_scale(p, height),
                lattice_index=(int(iy - 1), int(ix - 1)),
            )
        )
    logger.debug("peaks detected", extra={"p": p, "k": len(accepted)})
    return PeakSet(peaks=accepted, cluster_radius=radius, p=p)


# --- 2. Energy ---


@dataclass(frozen=True)
class EnergyCheck:
    energy: float
    ratio: float
    per_peak_ratio: float
    cross_check: float


def energy_check(u: Field, p: float, k: int = 1) -> EnergyCheck:
    """E = p·Σ_h|∇_h u|², ratio E/(8πe), and |E − p·Σ_h u^{p+1}|/E."""
    if k < 1:
        raise ValueError("k must be at least 1")
    grid = u.grid
    energy = p * gradient_energy(grid, u)
    power = p * grid.h * grid.h * float(np.sum(positive_power(u.values, p + 1.0)))
    ratio = energy / BUBBLE_ENERGY
    return EnergyCheck(
        energy=energy,
        ratio=ratio,
        per_peak_ratio=ratio / k,
        cross_check=abs(energy - power) / energy,
    )


# --- 3. Rescaled profiles ---


def _polar_samples(r_min: float, r_max: float, n_radial: int, n_angle: int, geometric: bool = False) -> np.ndarray:
    radii = np.geomspace(r_min, r_max, n_radial) if geometric else np.linspace(r_min, r_max, n_radial)
    theta = 2.0 * math.pi * np.arange(n_angle) / n_angle
    z = radii[:, None, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)[None, :, :]
    return z.reshape(-1, 2)


def rescaled_samples(u: Field, p: float, peak: Peak, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """w(z) = p(ũ(y+εz) − ũ(y))/height at the sample offsets that land inside the domain."""
    y = np.asarray(peak.location)
    x = y + peak.eps * z
    inside = signed_distance(u.grid.spec, x) < 0
    base = float(u.sample(y[None, :])[0])
    w = p * (u.sample(x[inside]) - base) / peak.height
    return z[inside], w


def _profile_error(u: Field, p: float, peak: Peak, R_compare: float) -> float:
    if R_compare * peak.eps < 4.0 * u.grid.h:
        raise PeakUnresolved(
            f"R·ε = {R_compare * peak.eps:.3e} is below 4h = {4.0 * u.grid.h:.3e}",
            p=p,
            eps=peak.eps,
        )
    z, w = rescaled_samples(u, p, peak, _polar_samples(0.0, R_compare, 41, 32))
    return float(np.abs(w - eval_U(z)).max())


def profile_check(u: Field, p: float, peaks: PeakSet, R_compare: float = 5.0) -> list[float]:
    """Per peak, sup over |z| ≤ R_compare of |w(z) − U(z)|.

    Raises:
        PeakUnresolved: R_compare·ε < 4h for some peak.
    """
    return [_profile_error(u, p, peak, R_compare) for peak in peaks.peaks]


# --- 4. Off-peak behavior ---


def off_peak_checks(
    u: Field,
    p: float,
    peaks: PeakSet,
    g: GreenEvaluator,
    delta: Optional[float] = None,
) -> tuple[float, float]:
    """Sups of √p·u and |p·u − 8π√e Σ G(·, y_i)| over nodes outside the δ-balls."""
    grid = u.grid
    delta = delta if delta is not None else 0.3 * grid.spec.diameter
    if delta < 5.0 * grid.h:
        raise ValueError("delta must be at least 5h")
    centers = np.asarray([peak.location for peak in peaks.peaks])
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if math.dist(centers[i], centers[j]) <= 2.0 * delta:
                raise BallOverlap(f"δ-balls of peaks {i} and {j} overlap", delta=delta)

    dist = np.hypot(
        grid.nodes[:, None, 0] - centers[None, :, 0], grid.nodes[:, None, 1] - centers[None, :, 1]
    )
    outside = (dist >= delta).all(axis=1)
    if not outside.any():
        raise EmptyTestSet(f"no grid node lies outside the δ-balls (δ={delta:g})", delta=delta)
    nodes = grid.nodes[outside]
    values = u.values[outside]
    superposition = np.zeros(len(nodes))
    for y in centers:
        superposition += np.asarray(g.green(nodes, y))
    superposition *= 8.0 * math.pi * SQRT_E
    sqrtp_sup = math.sqrt(p) * float(np.abs(values).max())
    green_sup = float(np.abs(p * values - superposition).max())
    return sqrtp_sup, green_sup


# --- 5. Decay bounds ---


def envelope_constant(s: np.ndarray, w: np.ndarray, gamma: float) -> float:
    """Smallest C with w ≤ (4−γ) log(1/s) + C at the samples."""
    return float(np.max(np.asarray(w) + (4.0 - gamma) * np.log(np.asarray(s))))


def uniform_constant(s: np.ndarray, w: np.ndarray, p: float, gamma: float) -> float:
    """Smallest C with (1 + w/p)₊^p ≤ C s^{−(4−γ)} at the samples."""
    base = np.maximum(1.0 + np.asarray(w) / p, 0.0)
    return float(np.max(positive_power(base, p) * np.asarray(s) ** (4.0 - gamma)))


def _ball_radius(peaks: PeakSet, index: int, spec) -> float:
    y = np.asarray(peaks.peaks[index].location)
    r = -float(signed_distance(spec, y)) / 3.0
    others = [math.dist(y, q.location) for j, q in enumerate(peaks.peaks) if j != index]
    if others:
        r = min(r, 0.25 * min(others))
    return r


def bound_checks(
    u: Field, p: float, peaks: PeakSet, gamma: float = 1.0, r: Optional[float] = None
) -> list[PeakBounds]:
    """Fitted envelope and uniform-bound constants on R_γ ≤ |z| ≤ r/ε per peak.

    Raises:
        AnnulusUnresolved: The annulus is empty or thinner than the grid resolves.
    """
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")
    grid = u.grid
    out = []
    for index, peak in enumerate(peaks.peaks):
        radius = r if r is not None else _ball_radius(peaks, index, grid.spec)
        s_max = radius / peak.eps
        if s_max <= 2.0 * ENVELOPE_RADIUS or (s_max - ENVELOPE_RADIUS) * peak.eps < 2.0 * grid.h:
            raise AnnulusUnresolved(
                f"annulus {ENVELOPE_RADIUS:g} ≤ |z| ≤ {s_max:.3g} is not resolved at h={grid.h:g}",
                p=p,
                eps=peak.eps,
            )
        z, w = rescaled_samples(u, p, peak, _polar_samples(ENVELOPE_RADIUS, s_max, 40, 32, geometric=True))
        s = np.hypot(z[:, 0], z[:, 1])

        y = np.asarray(peak.location)
        in_ball = np.hypot(*(grid.nodes - y).T) < radius
        w_nodes = p * (u.values[in_ball] - peak.height) / peak.height
        base = 1.0 + w_nodes / p
        nonpositive = w_nodes <= 0
        power = positive_power(base[nonpositive], p)
        out.append(
            PeakBounds(
                gamma=gamma,
                R=ENVELOPE_RADIUS,
                s_max=s_max,
                envelope_constant=envelope_constant(s, w, gamma),
                uniform_constant=uniform_constant(s, w, p, gamma),
                power_le_one=bool(np.all(power <= 1.0)),
                above_minus_p=bool(np.all(w_nodes > -p)),
            )
        )
    return out


# --- 6. Green-representation split ---


def decomposition_check(
    u: Field,
    p: float,
    peaks: PeakSet,
    index: int,
    g: GreenEvaluator,
    r: Optional[float] = None,
) -> Decomposition:
    """Split u(y) = A + B + C + tail by grid quadrature at one peak.

    A = ∫_{B_r} H(y,x)u^p, B = −(1/2π)∫_{B_r}(log|x−y| − log ε)u^p,
    C = −(log ε/2π)∫_{B_r}u^p, tail = ∫_{Ω∖B_r} G(y,x)u^p. The cell holding y
    uses the cell mean of log|x−y|.

    Raises:
        BallOverlap: B_r(y) leaves the domain or meets another peak's ball.
        QuadratureUnresolved: ε < h/2 or too few nodes in B_r(y).
    """
    grid = u.grid
    peak = peaks.peaks[index]
    y = np.asarray(peak.location)
    radius = r if r is not None else _ball_radius(peaks, index, grid.spec)
    if radius >= -float(signed_distance(grid.spec, y)):
        raise BallOverlap(f"B_r(y) with r={radius:g} leaves the domain", r=radius)
    for j, other in enumerate(peaks.peaks):
        if j != index and math.dist(y, other.location) < 2.0 * radius:
            raise BallOverlap(f"B_r(y) meets the ball of peak {j}", r=radius)
    h = grid.h
    if peak.eps < 0.5 * h:
        raise QuadratureUnresolved(f"ε = {peak.eps:.3e} is below h/2", p=p, eps=peak.eps)

    rel = grid.nodes - y
    dist = np.hypot(rel[:, 0], rel[:, 1])
    ball = dist < radius
    if int(ball.sum()) < MIN_BALL_NODES:
        raise QuadratureUnresolved(f"B_r(y) holds {int(ball.sum())} nodes", r=radius)

    cell = h * h
    power = positive_power(u.values, p)
    log_eps = math.log(peak.eps)
    log_dist = np.empty(int(ball.sum()))
    in_cell = (np.abs(rel[ball]) <= 0.5 * h).all(axis=1)
    log_dist[~in_cell] = np.log(dist[ball][~in_cell])
    log_dist[in_cell] = math.log(h) + LOG_CELL_MEAN

    ball_power = power[ball]
    # H(y, x) = H(x, y) and G(y, x) = G(x, y)
    H = np.asarray(g.regular_part(grid.nodes[ball], y))
    A = cell * float(np.sum(H * ball_power))
    B = -cell / (2.0 * math.pi) * float(np.sum((log_dist - log_eps) * ball_power))
    integral = cell * float(np.sum(ball_power))
    C = -log_eps / (2.0 * math.pi) * integral
    G_out = np.asarray(g.green(grid.nodes[~ball], y))
    tail = cell * float(np.sum(G_out * power[~ball]))

    height = peak.height
    return Decomposition(
        radius=radius,
        A=A,
        B=B,
        C=C,
        tail=tail,
        mass=p / height * integral,
        m_est=math.exp(0.5 * C / height),
        identity_defect=abs(height - (A + B + C + tail)) / height,
        log_eps_defect=abs(log_eps + 0.5 * (p - 1.0) * math.log(height) + 0.5 * math.log(p)),
    )


# --- 7. Extrapolation ---


def extrapolate(values: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit of a + b·log p/p + c/p; returns (a, RMS residual).

    Raises:
        IllConditionedFit: The design matrix condition number exceeds 1e12.
    """
    data = np.asarray(values, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2 or len(data) < 4:
        raise ValueError("extrapolation needs at least 4 (p, value) samples")
    p = data[:, 0]
    if len(np.unique(p)) != len(p):
        raise ValueError("extrapolation samples need distinct p")
    if np.any(p <= 0):
        raise ValueError("p must be positive")
    X = np.stack([np.ones_like(p), np.log(p) / p, 1.0 / p], axis=1)
    cond = float(np.linalg.cond(X))
    if not cond <= 1e12:
        raise IllConditionedFit(f"design condition number {cond:.3e}", condition=cond)
    coef, *_ = np.linalg.lstsq(X, data[:, 1], rcond=None)
    rms = float(np.sqrt(np.mean((X @ coef - data[:, 1]) ** 2)))
    return float(coef[0]), rms


# --- 8. Report ---


def build_report(
    u: Field,
    p: float,
    toggles: DiagnosticsToggles,
    g: Optional[GreenEvaluator] = None,
) -> DiagnosticsReport:
    """Assemble every enabled diagnostic for one solution; soft failures become warnings."""
    grid = u.grid
    peaks = detect_peaks(u, p, toggles.height_floor, toggles.cluster_radius)
    report = DiagnosticsReport(p=p, h=grid.h, k=peaks.k, peaks=peaks, max_norm=u.max_norm)
    extra = {"p": p, "h": grid.h}

    def soft(exc: Exception) -> None:
        report.warnings.append(f"{type(exc).__name__}: {exc}")
        logger.warning("diagnostic skipped: %s", exc, extra={**extra, "error_type": type(exc).__name__})

    if toggles.energy:
        check = energy_check(u, p, peaks.k)
        report.energy = check.energy
        report.energy_ratio = check.ratio
        report.energy_cross_check = check.cross_check

    if toggles.profile:
        for peak in peaks.peaks:
            try:
                report.profile_errors.append(_profile_error(u, p, peak, toggles.r_compare))
            except PeakUnresolved as exc:
                report.profile_errors.append(None)
                soft(exc)

    if toggles.bounds:
        for index in range(peaks.k):
            single = PeakSet(peaks=[peaks.peaks[index]], cluster_radius=peaks.cluster_radius, p=p)
            try:
                radius = _ball_radius(peaks, index, grid.spec)
                report.bounds.append(bound_checks(u, p, single, toggles.gamma, r=radius)[0])
            except AnnulusUnresolved as exc:
                report.bounds.append(None)
                soft(exc)

    if g is not None:
        if toggles.off_peak:
            try:
                report.sqrtp_sup, report.green_sup = off_peak_checks(u, p, peaks, g, toggles.delta)
            except (DiagnosticsError, ValueError) as exc:
                soft(exc)
        if toggles.decomposition:
            for index in range(peaks.k):
                try:
                    report.decompositions.append(decomposition_check(u, p, peaks, index, g))
                except (DiagnosticsError, GreenError) as exc:
                    report.decompositions.append(None)
                    soft(exc)
        try:
            cfg = Configuration(
                points=[peak.location for peak in peaks.peaks],
                weights=[peak.height for peak in peaks.peaks],
            )
            report.system_residual = float(np.linalg.norm(system_residual(cfg, g), axis=1).max())
        except (GreenError, ValueError) as exc:
            soft(exc)
    return report
