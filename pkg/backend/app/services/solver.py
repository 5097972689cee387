"""Discrete Lane-Emden solver: Shortley-Weller Laplacian, Newton, continuation in p."""
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import csc_matrix, csr_matrix, diags, triu
from scipy.sparse.linalg import splu

from app.core.config import get_settings
from app.core.errors import (
    CenterOutside,
    ContinuationStalled,
    ConvergedToZero,
    EigSolveFailed,
    LabError,
    LinearSolveFailed,
    NewtonStalled,
    SignChangingSolution,
    SolverError,
)
from app.core.logging import setup_logging
from app.models.run import NewtonSettings
from app.services.geometry import Grid, signed_distance
from app.services.liouville import eval_U

logger = setup_logging("solver")

ZERO_SOLUTION = 1e-8
SIGN_CHANGE = 1e-8
# Accept a damped step once the residual drops by this fraction of the step.
ARMIJO = 1e-4
# Residuals within this many roundoff units of the row magnitudes count as converged.
ROUNDOFF_UNITS = 16.0
FAST_NEWTON = 4
BUBBLE_HEIGHT = math.sqrt(math.e)


@dataclass(frozen=True, eq=False)
class Field:
    """Grid function on the unknowns; the value on the boundary is zero."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_unknowns,):
            raise ValueError(
                f"field has shape {values.shape}, grid has {self.grid.n_unknowns} unknowns"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def max_norm(self) -> float:
        return float(np.abs(self.values).max(initial=0.0))

    def lattice(self) -> np.ndarray:
        return self.grid.to_lattice(self.values)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(
            (self.grid.ys, self.grid.xs),
            self.lattice(),
            method="linear",
            bounds_error=False,
            fill_value=0.0,
        )

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation of the zero-extended lattice at (x, y) points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self._interpolator(pts[:, ::-1])

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Field":
        """Sample ``fn(x, y)`` at the unknowns."""
        return cls(grid, np.asarray(fn(grid.nodes[:, 0], grid.nodes[:, 1]), dtype=float))


@dataclass(frozen=True)
class SolveResult:
    field: Field
    iterations: int
    residual_norm: float


@dataclass(frozen=True)
class ContinuationStep:
    p: float
    field: Field
    iterations: int
    residual: float
    wall_time: float


@dataclass
class ContinuationRun:
    """Solutions along the branch, one per accepted p."""

    grid: Grid
    initial_guess: str
    steps: list[ContinuationStep] = field(default_factory=list)
    status: Literal["completed", "stalled"] = "completed"
    error: Optional[LabError] = None

    @property
    def domain(self):
        return self.grid.spec

    @property
    def p_values(self) -> list[float]:
        return [step.p for step in self.steps]

    def field_at(self, p: float) -> Field:
        for step in self.steps:
            if math.isclose(step.p, p, rel_tol=1e-12, abs_tol=1e-12):
                return step.field
        raise KeyError(f"p={p} was not reached by this run")

    def raise_for_status(self) -> None:
        if self.error is not None:
            raise self.error


# --- 1. Operator ---


def assemble_laplacian(grid: Grid) -> csr_matrix:
    """Sparse −Δ_h with Shortley-Weller rows at boundary-adjacent nodes.

    For arms θ_E, θ_W the x-part of a row is 2/(h²θ_Eθ_W) on the diagonal and
    −2/(h²θ_E(θ_E+θ_W)), −2/(h²θ_W(θ_E+θ_W)) toward the east and west
    neighbors; cut arms carry the zero Dirichlet value and drop out.
    """
    cached = grid.cache.get("laplacian")
    if cached is not None:
        return cached

    n = grid.n_unknowns
    h2 = grid.h * grid.h
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    diag = np.zeros(n)
    vals = []
    for pair in ((0, 1), (2, 3)):
        plus, minus = grid.arms[:, pair[0]], grid.arms[:, pair[1]]
        total = plus + minus
        coeffs = (2.0 / (h2 * plus * total), 2.0 / (h2 * minus * total))
        diag += 2.0 / (h2 * plus * minus)
        for k, coeff in zip(pair, coeffs):
            nb = grid.neighbors[:, k]
            mask = nb >= 0
            rows.append(np.nonzero(mask)[0])
            cols.append(nb[mask])
            vals.append(-coeff[mask])
    data = np.concatenate([diag, *vals])
    A = csr_matrix((data, (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    grid.cache["laplacian"] = A
    return A


def apply_laplacian(grid: Grid, u: Field) -> Field:
    """Return −Δ_h u (a positive operator)."""
    return Field(grid, assemble_laplacian(grid) @ u.values)


def positive_power(values: np.ndarray, p: float) -> np.ndarray:
    """(max(u, 0))^p evaluated as exp(p log u) on the positive part."""
    out = np.zeros_like(values, dtype=float)
    pos = values > 0
    with np.errstate(over="ignore", under="ignore"):
        out[pos] = np.exp(p * np.log(values[pos]))
    return out


def residual(grid: Grid, u: Field, p: float) -> Field:
    """Return −Δ_h u − (u₊)^p nodewise."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    return Field(grid, _residual_values(assemble_laplacian(grid), u.values, p))


def _residual_values(A: csr_matrix, values: np.ndarray, p: float) -> np.ndarray:
    return A @ values - positive_power(values, p)


def gradient_energy(grid: Grid, u: Field) -> float:
    """Edge-sum Dirichlet energy Σ_h |∇_h u|² from the symmetric part of −Δ_h.

    Edge weights w_ij = −h²(A_ij + A_ji)/2 and boundary weights
    b_i = h²·rowsum of the symmetric part, so the sum equals h²·uᵀAu.
    """
    A = assemble_laplacian(grid)
    sym = 0.5 * (A + A.T)
    upper = triu(sym, k=1).tocoo()
    h2 = grid.h * grid.h
    v = u.values
    edges = float(np.sum(-h2 * upper.data * (v[upper.row] - v[upper.col]) ** 2))
    b = h2 * np.asarray(sym.sum(axis=1)).ravel()
    return edges + float(np.sum(b * v * v))


def pairing(grid: Grid, u: Field) -> float:
    """Σ_h u·(−Δ_h u) with cell area h²."""
    return float(grid.h * grid.h * u.values @ (assemble_laplacian(grid) @ u.values))


# --- 2. Newton ---


def _linear_solve(J: csc_matrix, rhs: np.ndarray, rtol: float) -> np.ndarray:
    try:
        lu = splu(J)
    except RuntimeError as exc:
        raise LinearSolveFailed(f"sparse LU failed: {exc}") from exc
    x = lu.solve(rhs)
    absJ = abs(J)
    for refinement in range(3):
        r = rhs - J @ x
        # componentwise backward error
        scale = absJ @ np.abs(x) + np.abs(rhs)
        berr = float(np.max(np.abs(r) / np.where(scale > 0, scale, 1.0), initial=0.0))
        if berr <= rtol:
            return x
        if refinement < 2:
            x = x + lu.solve(r)
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailed("linear solve produced non-finite values")
    raise LinearSolveFailed(f"linear residual {berr:.3e} above {rtol:.1e}", backward_error=berr)


def roundoff_floor(absA: csr_matrix, values: np.ndarray, p: float) -> float:
    """Smallest max-norm residual resolvable in double precision for this field."""
    scale = absA @ np.abs(values) + positive_power(values, p)
    return ROUNDOFF_UNITS * float(np.finfo(float).eps) * float(scale.max(initial=0.0))


def newton_solve(
    grid: Grid, u0: Field, p: float, s: Optional[NewtonSettings] = None
) -> SolveResult:
    """Solve −Δ_h u = (u₊)^p by damped Newton iteration.

    Args:
        grid: Grid the field lives on.
        u0: Initial guess.
        p: Exponent, p > 1.
        s: Newton controls; process settings when omitted.

    Returns:
        SolveResult with the accepted field, iteration count, and max-norm residual.

    Raises:
        NewtonStalled: Iteration budget exhausted or line search below the minimum step.
        ConvergedToZero: Converged to the trivial solution.
        SignChangingSolution: Converged to a field with significantly negative values.
        LinearSolveFailed: A Jacobian solve missed its residual tolerance.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if u0.grid is not grid:
        raise ValueError("initial guess lives on a different grid")
    s = s or NewtonSettings.from_settings()
    A = assemble_laplacian(grid)
    absA = abs(A)
    u = u0.values.copy()
    F = _residual_values(A, u, p)
    norm = float(np.abs(F).max(initial=0.0))

    iterations = 0
    while norm > max(s.tol, roundoff_floor(absA, u, p)):
        if iterations >= s.max_iter:
            raise NewtonStalled(
                f"no convergence in {s.max_iter} iterations (residual {norm:.3e})",
                p=p,
                residual=norm,
            )
        J = (A - diags(p * positive_power(u, p - 1.0))).tocsc()
        delta = _linear_solve(J, -F, s.linear_rtol)

        step = 1.0
        while True:
            trial = u + step * delta
            F_trial = _residual_values(A, trial, p)
            trial_norm = float(np.abs(F_trial).max(initial=0.0))
            if trial_norm <= s.tol or trial_norm < (1.0 - ARMIJO * step) * norm:
                break
            step *= s.backtrack
            if step < s.min_step:
                raise NewtonStalled(
                    f"line search below minimum step at residual {norm:.3e}",
                    p=p,
                    residual=norm,
                    iteration=iterations,
                )
        u, F, norm = trial, F_trial, trial_norm
        iterations += 1
        logger.debug(
            "newton step",
            extra={"p": p, "iteration": iterations, "residual": norm, "step": step},
        )

    height = float(np.abs(u).max(initial=0.0))
    if height < ZERO_SOLUTION:
        raise ConvergedToZero(f"converged to the trivial solution at p={p}", p=p)
    low = float(u.min())
    if low < -SIGN_CHANGE * height:
        raise SignChangingSolution(f"solution has min {low:.3e} at p={p}", p=p, minimum=low)
    if low < 0:
        u = np.maximum(u, 0.0)
    return SolveResult(Field(grid, u), iterations, norm)


# --- 3. Initial guesses ---


def first_eigenpair(grid: Grid, max_iter: int = 500, tol: float = 1e-8) -> tuple[float, Field]:
    """First Dirichlet eigenpair of −Δ_h by inverse iteration, with ‖φ‖∞ = 1 and φ > 0."""
    cached = grid.cache.get("eigenpair")
    if cached is not None:
        return cached
    A = assemble_laplacian(grid)
    lu = splu(A.tocsc())
    phi = np.ones(grid.n_unknowns)
    lam = float("nan")
    eig_residual = float("inf")
    for it in range(1, max_iter + 1):
        psi = lu.solve(phi)
        peak = float(np.abs(psi).max())
        phi = np.abs(psi) / peak
        lam = 1.0 / peak
        eig_residual = float(np.abs(A @ phi - lam * phi).max()) / lam
        if eig_residual < tol:
            logger.debug("inverse iteration converged", extra={"iteration": it, "residual": eig_residual})
            pair = (lam, Field(grid, phi))
            grid.cache["eigenpair"] = pair
            return pair
    raise EigSolveFailed(
        f"eigenresidual {eig_residual:.3e} after {max_iter} iterations", residual=eig_residual
    )


def initial_guess(grid: Grid, p0: float) -> Field:
    """α·φ₁ with α = λ₁^{1/(p0−1)}."""
    if not 1 < p0 <= 5:
        raise ValueError("initial guess requires 1 < p0 <= 5")
    lam, phi = first_eigenpair(grid)
    alpha = lam ** (1.0 / (p0 - 1.0))
    return Field(grid, alpha * phi.values)


def bubble_scale(p: float, height: float) -> float:
    """ε = [p·height^{p−1}]^{−1/2}, computed in log space."""
    return math.exp(-0.5 * (math.log(p) + (p - 1.0) * math.log(height)))


def multi_bubble_guess(grid: Grid, p: float, centers: Sequence[tuple[float, float]]) -> Field:
    """Superposition of truncated bubbles m(1 + U((x−xᵢ)/ε)/p)₊ with m = √e."""
    if p < 10:
        raise ValueError("multi-bubble guess requires p >= 10")
    pts = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("at least one center is required")
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if np.allclose(pts[i], pts[j]):
                raise ValueError("bubble centers must be pairwise distinct")
    depth = signed_distance(grid.spec, pts)
    for c, d in zip(pts, depth):
        if d >= -2.0 * grid.h:
            raise CenterOutside(
                f"center ({c[0]:.6g}, {c[1]:.6g}) is within 2h of the boundary or outside",
                distance=float(d),
            )

    eps = bubble_scale(p, BUBBLE_HEIGHT)
    total = np.zeros(grid.n_unknowns)
    for c in pts:
        z = (grid.nodes - c) / eps
        total += BUBBLE_HEIGHT * np.maximum(1.0 + eval_U(z) / p, 0.0)
    return Field(grid, total)


# --- 4. Continuation ---

WARMUP_P = 2.0
DIRECT_START_MAX_P = 5.0


def continue_in_p(
    grid: Grid,
    p_start: float,
    p_end: float,
    s: Optional[NewtonSettings] = None,
    *,
    u_start: Optional[Field] = None,
    start_label: str = "first-eigenfunction",
    checkpoints: Sequence[float] = (),
    dp_initial: Optional[float] = None,
    dp_min: Optional[float] = None,
    run_name: str = "",
) -> ContinuationRun:
    """Follow the solution branch from p_start to p_end.

    The step doubles after a Newton solve of at most four iterations and halves
    on failure, retrying from the last accepted field. Checkpoint values are
    hit exactly. A stall returns the partial run with status "stalled".

    Args:
        grid: Grid to solve on.
        p_start: First exponent, > 1.
        p_end: Last exponent, >= p_start.
        s: Newton controls.
        u_start: Guess at p_start. Without it the first eigenfunction is used,
            warmed up from p = 2 when p_start > 5.
        start_label: Description of u_start recorded with the run.
        checkpoints: Exponents that must appear among the accepted values.
        dp_initial: First step (settings default 0.5).
        dp_min: Step floor (settings default 1e-3).
        run_name: Name attached to log records.

    Raises:
        NewtonStalled: The solve at p_start failed (nothing was accepted).
    """
    if not 1 < p_start <= p_end:
        raise ValueError("continuation requires 1 < p_start <= p_end")
    settings = get_settings()
    s = s or NewtonSettings.from_settings(settings)
    dp = dp_initial if dp_initial is not None else settings.dp_initial
    dp_floor = dp_min if dp_min is not None else settings.dp_min
    log_extra = {"run": run_name, "h": grid.h}

    if u_start is None:
        if p_start <= DIRECT_START_MAX_P:
            u_start = initial_guess(grid, p_start)
        else:
            warm = continue_in_p(
                grid, WARMUP_P, p_start, s, dp_initial=dp, dp_min=dp_floor, run_name=run_name
            )
            warm.raise_for_status()
            u_start = warm.steps[-1].field
            start_label = f"{start_label} (warm-up from p={WARMUP_P:g})"
    run = ContinuationRun(grid=grid, initial_guess=start_label)

    tic = time.perf_counter()
    first = newton_solve(grid, u_start, p_start, s)
    run.steps.append(
        ContinuationStep(p_start, first.field, first.iterations, first.residual_norm, time.perf_counter() - tic)
    )
    logger.info(
        "branch started",
        extra={**log_extra, "p": p_start, "iteration": first.iterations, "residual": first.residual_norm},
    )

    stops = sorted({c for c in checkpoints if p_start < c < p_end} | {p_end})
    current = first.field
    p = p_start
    below_floor = 0
    while p < p_end:
        stop = next(c for c in stops if c > p)
        target = min(p + dp, stop)
        tic = time.perf_counter()
        try:
            result = newton_solve(grid, current, target, s)
        except SolverError as exc:
            dp *= 0.5
            logger.debug(
                "continuation step rejected: %s",
                exc,
                extra={**log_extra, "p": target, "step": dp, "error_type": type(exc).__name__},
            )
            if dp < dp_floor:
                below_floor += 1
                dp = dp_floor
                if below_floor >= 2:
                    run.status = "stalled"
                    run.error = ContinuationStalled(
                        f"step fell below {dp_floor:g} twice at p={p:g}", p=p, step=dp
                    )
                    logger.warning("continuation stalled", extra={**log_extra, "p": p, "step": dp})
                    break
            continue

        run.steps.append(
            ContinuationStep(target, result.field, result.iterations, result.residual_norm, time.perf_counter() - tic)
        )
        current = result.field
        p = target
        below_floor = 0
        if result.iterations <= FAST_NEWTON:
            dp = min(2.0 * dp, max(1.0, 0.25 * p))
        logger.info(
            "continuation step accepted",
            extra={**log_extra, "p": p, "iteration": result.iterations, "residual": result.residual_norm, "step": dp},
        )
    return run
