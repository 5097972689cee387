"""Run orchestration: continuation branches, diagnostics, concentration sets, sweeps."""
import math
import platform
import time
from dataclasses import dataclass, field
from functools import partial
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Optional

import anyio
import anyio.to_thread
import numpy as np

from app.core.config import Settings, get_settings
from app.core.errors import ContinuationStalled, LabError, NoPeaks, NoSolutionFound
from app.core.logging import setup_logging
from app.models.domain import Disk
from app.models.results import DiagnosticsReport
from app.models.run import NewtonSettings, RunConfig
from app.services.artifacts import RunArtifacts, p_label
from app.services.concentration import solve_system
from app.services.diagnostics import build_report, extrapolate
from app.services.geometry import build_grid
from app.services.green import GreenEvaluator
from app.services.radial import oracle_table, shoot
from app.services.solver import ContinuationRun, Field, continue_in_p, multi_bubble_guess

logger = setup_logging("runner")

PACKAGES = ("lane-emden-lab", "numpy", "scipy", "pydantic", "pydantic-settings", "anyio")


@dataclass
class BranchResult:
    rows: list[dict[str, Any]]
    branch: Optional[ContinuationRun] = None
    error: Optional[LabError] = None
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class RunOutcome:
    status: str
    run_dir: Path
    rows: list[dict[str, Any]]
    error: Optional[LabError] = None

    @property
    def exit_code(self) -> int:
        return 0 if self.error is None else 1


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            out[name] = version(name)
        except PackageNotFoundError:
            out[name] = "unknown"
    return out


def _report_columns(report: DiagnosticsReport) -> dict[str, Any]:
    profiles = [e for e in report.profile_errors if e is not None]
    decompositions = [d for d in report.decompositions if d is not None]
    return {
        "k": report.k,
        "energy": report.energy,
        "energy_ratio": report.energy_ratio,
        "energy_cross_check": report.energy_cross_check,
        "sqrtp_sup": report.sqrtp_sup,
        "green_sup": report.green_sup,
        "profile_error_max": max(profiles) if profiles else None,
        "mass_min": min(d.mass for d in decompositions) if decompositions else None,
        "m_est_mean": float(np.mean([d.m_est for d in decompositions])) if decompositions else None,
        "system_residual": report.system_residual,
    }


def disk_oracle_values(spec: Disk, p: float, points: np.ndarray) -> np.ndarray:
    """Exact disk solution at points: u_R(x) = R^{−2/(p−1)} u_1((x − c)/R)."""
    sol = shoot(float(p))
    rho = np.hypot(points[:, 0] - spec.center[0], points[:, 1] - spec.center[1]) / spec.radius
    return spec.radius ** (-2.0 / (p - 1.0)) * sol.u(rho)


class LabRunner:
    """Executes one run config, or a sweep of independent entries derived from it."""

    def __init__(
        self,
        config: RunConfig,
        settings: Optional[Settings] = None,
        jobs: Optional[int] = None,
        run_dir: Optional[Path] = None,
    ) -> None:
        self.config = config
        self.settings = settings or get_settings()
        self.jobs = jobs or self.settings.jobs
        self.run_dir = Path(run_dir) if run_dir is not None else self.settings.output_root / (
            config.output_dir or config.name
        )

    # --- single branch ---

    def _pipeline(self, config: RunConfig, artifacts: RunArtifacts) -> BranchResult:
        result = BranchResult(rows=[])
        log_extra = {"run": config.name}
        newton = config.newton or NewtonSettings.from_settings(self.settings)

        tic = time.perf_counter()
        grid = build_grid(config.domain, config.h)
        result.timings["grid"] = time.perf_counter() - tic

        greens: dict[str, GreenEvaluator] = {}

        def green() -> GreenEvaluator:
            if "g" not in greens:
                tic = time.perf_counter()
                greens["g"] = GreenEvaluator.for_domain(config.domain)
                result.timings["green"] = time.perf_counter() - tic
            return greens["g"]

        u_start, label = None, "first-eigenfunction"
        if config.bubble_start is not None:
            centers = config.bubble_start.centers
            u_start = multi_bubble_guess(grid, config.p_start, centers)
            label = f"bubbles at {[list(c) for c in centers]}"
        report_p = sorted(set(config.report_p)) or [config.p_end]

        tic = time.perf_counter()
        branch = continue_in_p(
            grid,
            config.p_start,
            config.p_end,
            newton,
            u_start=u_start,
            start_label=label,
            checkpoints=report_p,
            dp_initial=self.settings.dp_initial,
            dp_min=self.settings.dp_min,
            run_name=config.name,
        )
        result.branch = branch
        result.timings["continuation"] = time.perf_counter() - tic
        result.timings["newton_total"] = sum(step.wall_time for step in branch.steps)

        rows = {
            step.p: {
                "domain": config.domain.kind,
                "h": grid.h,
                "p": step.p,
                "iterations": step.iterations,
                "residual": step.residual,
                "max_norm": step.field.max_norm,
                "status": "accepted",
            }
            for step in branch.steps
        }

        toggles = config.diagnostics
        needs_green = toggles.off_peak or toggles.decomposition
        tic = time.perf_counter()
        for p in report_p:
            if p not in rows:
                continue
            u = branch.field_at(p)
            artifacts.write_field_csv(f"fields/{p_label(p)}.csv", u)
            artifacts.write_pgm(f"fields/{p_label(p)}.pgm", u)
            if not toggles.peaks:
                continue
            try:
                report = build_report(u, p, toggles, green() if needs_green else None)
            except NoPeaks as exc:
                logger.warning("no peaks: %s", exc, extra={**log_extra, "p": p})
                artifacts.write_json(f"diagnostics/{p_label(p)}.json", exc.to_record())
                continue
            artifacts.write_json(f"diagnostics/{p_label(p)}.json", report)
            rows[p].update(_report_columns(report))
        result.timings["diagnostics"] = time.perf_counter() - tic

        if config.green_slice is not None:
            y = np.asarray(config.green_slice, dtype=float)
            away = np.hypot(*(grid.nodes - y).T) > 0
            values = np.full(grid.n_unknowns, np.nan)
            values[away] = green().green(grid.nodes[away], y)
            artifacts.write_field_csv("fields/green_slice.csv", Field(grid, np.nan_to_num(values)), values)

        for k in config.concentration_k:
            tic = time.perf_counter()
            try:
                found = solve_system(k, green(), config.concentration_starts, seed=config.seed)
                payload = {"status": "ok", "k": k, "configurations": [c.model_dump(mode="json") for c in found]}
            except NoSolutionFound as exc:
                logger.warning("no configuration: %s", exc, extra={**log_extra, "k": k})
                payload = {**exc.to_record(), "status": "no_solution", "k": k}
            artifacts.write_json(f"configurations/k{k}.json", payload)
            result.timings[f"concentration_k{k}"] = time.perf_counter() - tic

        result.rows = [rows[p] for p in sorted(rows)]
        if branch.status == "stalled":
            result.error = branch.error
        return result

    def _finish(
        self,
        artifacts: RunArtifacts,
        rows: list[dict[str, Any]],
        error: Optional[LabError],
        timings: dict[str, Any],
        extra: Optional[dict[str, Any]] = None,
    ) -> RunOutcome:
        if error is None:
            status = "completed"
        elif isinstance(error, ContinuationStalled):
            status = "stalled"
        else:
            status = "error"
        if error is not None:
            artifacts.write_json("error.json", error.to_record())
        artifacts.write_summary(rows)
        manifest = {
            "name": self.config.name,
            "status": status,
            "config": self.config.model_dump(mode="json"),
            "versions": _versions(),
            "timings": timings,
            "error": error.to_record() if error is not None else None,
            **(extra or {}),
        }
        artifacts.register("manifest.json")
        manifest["files"] = sorted(artifacts.files)
        artifacts.write_json("manifest.json", manifest)
        logger.info(
            "run finished: %s (%d files)", status, len(artifacts.files), extra={"run": self.config.name}
        )
        return RunOutcome(status=status, run_dir=self.run_dir, rows=rows, error=error)

    def run(self) -> RunOutcome:
        """Run the configured branch and write the run directory."""
        artifacts = RunArtifacts(self.run_dir)
        tic = time.perf_counter()
        result = BranchResult(rows=[])
        extra: dict[str, Any] = {}
        try:
            result = self._pipeline(self.config, artifacts)
            extra["initial_guess"] = result.branch.initial_guess if result.branch else None
        except LabError as exc:
            logger.error("run failed: %s", exc, extra={"run": self.config.name, "error_type": type(exc).__name__})
            result.error = exc
        timings = {**result.timings, "total": time.perf_counter() - tic}
        return self._finish(artifacts, result.rows, result.error, timings, extra)

    # --- sweeps ---

    def _entries(self) -> list[tuple[str, RunConfig]]:
        sweep = self.config.sweep
        entries: list[tuple[str, RunConfig]] = []
        for i, h in enumerate(sorted(sweep.h_list, reverse=True)):
            entries.append((f"h{i}", self.config.model_copy(update={"h": h, "name": f"{self.config.name}-h{i}"})))
        if not sweep.oracle_only:
            for p in sorted(sweep.p_list):
                report = sorted({q for q in self.config.report_p if q <= p} | {p})
                update = {"p_end": p, "report_p": report, "name": f"{self.config.name}-{p_label(p)}"}
                entries.append((p_label(p), self.config.model_copy(update=update)))
        return entries

    async def _run_entries(self, artifacts: RunArtifacts, entries: list[tuple[str, RunConfig]]) -> list[BranchResult]:
        limiter = anyio.CapacityLimiter(self.jobs)
        results: list[Optional[BranchResult]] = [None] * len(entries)

        def guarded(config: RunConfig, child: RunArtifacts) -> BranchResult:
            try:
                return self._pipeline(config, child)
            except LabError as exc:
                logger.error("sweep entry failed: %s", exc, extra={"run": config.name})
                return BranchResult(rows=[], error=exc)

        async def one(index: int, prefix: str, config: RunConfig) -> None:
            results[index] = await anyio.to_thread.run_sync(
                partial(guarded, config, artifacts.child(prefix)), limiter=limiter
            )

        async with anyio.create_task_group() as tg:
            for index, (prefix, config) in enumerate(entries):
                tg.start_soon(one, index, prefix, config)
        return [r for r in results if r is not None]

    def _oracle_rows(self, p_values: list[float]) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
        table = oracle_table(sorted(p_values))
        rows = [
            {"domain": "oracle", "p": r["p"], "max_norm": r["M"], "energy": r["E"], "note": f"r0={r['r0']!r}"}
            for r in table
        ]
        fits = []
        for column, key in (("max_norm", "M"), ("energy", "E")):
            try:
                limit, rms = extrapolate([(r["p"], r[key]) for r in table])
            except (LabError, ValueError) as exc:
                logger.warning("extrapolation skipped: %s", exc)
                continue
            fits.append({"domain": "extrapolation", "note": f"{key} limit", column: limit, "residual": rms})
        return rows, fits

    def sweep(self) -> RunOutcome:
        """Run independent entries concurrently and merge their rows in sorted order."""
        sweep = self.config.sweep
        if sweep is None or not (sweep.h_list or sweep.p_list):
            raise ValueError("sweep has no entries")
        artifacts = RunArtifacts(self.run_dir)
        tic = time.perf_counter()
        rows: list[dict[str, Any]] = []
        error: Optional[LabError] = None
        timings: dict[str, Any] = {}

        if sweep.p_list and sweep.oracle_only:
            try:
                oracle_rows, fits = self._oracle_rows(sweep.p_list)
                rows.extend(oracle_rows + fits)
                artifacts.write_table(
                    "oracle.csv", ("p", "M", "E", "r0"), oracle_table(sorted(sweep.p_list))
                )
            except LabError as exc:
                error = exc

        entries = self._entries()
        results = anyio.run(self._run_entries, artifacts, entries) if entries else []
        for (prefix, config), result in zip(entries, results):
            rows.extend(result.rows)
            timings[prefix] = result.timings
            if error is None and result.error is not None:
                error = result.error

        if sweep.h_list and isinstance(self.config.domain, Disk):
            rows.extend(self._convergence(artifacts, entries, results))
        timings["total"] = time.perf_counter() - tic
        return self._finish(artifacts, rows, error, timings, {"entries": [prefix for prefix, _ in entries]})

    def _convergence(
        self, artifacts: RunArtifacts, entries: list[tuple[str, RunConfig]], results: list[BranchResult]
    ) -> list[dict[str, Any]]:
        """Max-norm error against the radial oracle at p_end, with successive ratios."""
        table = []
        for (prefix, config), result in zip(entries, results):
            if not prefix.startswith("h") or result.branch is None:
                continue
            branch = result.branch
            if not branch.steps or not math.isclose(branch.steps[-1].p, config.p_end):
                continue
            u = branch.steps[-1].field
            exact = disk_oracle_values(config.domain, config.p_end, u.grid.nodes)
            table.append({"h": u.grid.h, "p": config.p_end, "error": float(np.abs(u.values - exact).max())})
        table.sort(key=lambda r: -r["h"])
        for prev, cur in zip(table, table[1:]):
            cur["ratio"] = prev["error"] / cur["error"] if cur["error"] > 0 else None
        if table:
            artifacts.write_table("convergence.csv", ("h", "p", "error", "ratio"), table)
        return [
            {
                "domain": "convergence",
                "h": r["h"],
                "p": r["p"],
                "oracle_error": r["error"],
                "error_ratio": r.get("ratio"),
            }
            for r in table
        ]
