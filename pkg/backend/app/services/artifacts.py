"""Run-directory writers: CSV tables, 16-bit PGM heatmaps, JSON documents."""
import csv
import json
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np
from pydantic import BaseModel

from app.services.solver import Field

SUMMARY_COLUMNS = (
    "domain",
    "h",
    "p",
    "note",
    "iterations",
    "residual",
    "max_norm",
    "k",
    "energy",
    "energy_ratio",
    "energy_cross_check",
    "sqrtp_sup",
    "green_sup",
    "profile_error_max",
    "mass_min",
    "m_est_mean",
    "system_residual",
    "oracle_error",
    "error_ratio",
    "status",
)


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def p_label(p: float) -> str:
    """File-name fragment for an exponent, e.g. 12.5 -> 'p12.5'."""
    return f"p{float(p):g}"


class RunArtifacts:
    """Writes files below one run directory and remembers every path written."""

    def __init__(self, root: Path, prefix: str = "", files: Optional[list[str]] = None) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.prefix = prefix
        self.files: list[str] = [] if files is None else files

    def child(self, prefix: str) -> "RunArtifacts":
        """Writer for a subdirectory that records into the same file list."""
        return RunArtifacts(self.root, prefix=f"{self.prefix}{prefix}/", files=self.files)

    def register(self, relative: str) -> None:
        """Record a path that is written later (the manifest lists itself)."""
        self._path(relative)

    def _path(self, relative: str) -> Path:
        relative = f"{self.prefix}{relative}"
        path = self.root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        if relative not in self.files:
            self.files.append(relative)
        return path

    def write_json(self, relative: str, payload: Any) -> Path:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        path = self._path(relative)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path

    def write_field_csv(self, relative: str, field: Field, values: Optional[np.ndarray] = None) -> Path:
        """Rows (x, y, value) at the unknowns; boundary values are zero and omitted."""
        data = field.values if values is None else values
        path = self._path(relative)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["x", "y", "value"])
            for (x, y), v in zip(field.grid.nodes, data):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
        return path

    def write_pgm(self, relative: str, field: Field) -> Path:
        """Binary 16-bit PGM of the lattice, top row at the largest y, scaled by the max."""
        lattice = np.flipud(field.lattice())
        peak = float(np.abs(lattice).max(initial=0.0))
        scaled = np.zeros_like(lattice) if peak == 0 else np.clip(lattice / peak, 0.0, 1.0)
        pixels = np.round(scaled * 65535.0).astype(">u2")
        ny, nx = lattice.shape
        path = self._path(relative)
        with path.open("wb") as handle:
            handle.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
            handle.write(pixels.tobytes())
        return path

    def write_table(self, relative: str, columns: Iterable[str], rows: Iterable[dict[str, Any]]) -> Path:
        columns = list(columns)
        path = self._path(relative)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(row.get(c)) for c in columns])
        return path

    def write_summary(self, rows: list[dict[str, Any]]) -> Path:
        return self.write_table("summary.csv", SUMMARY_COLUMNS, sort_rows(rows))


def sort_rows(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Deterministic (domain, h, p, note) order; blanks sort last."""
    inf = float("inf")

    def key(row: dict[str, Any]) -> tuple:
        h = row.get("h")
        p = row.get("p")
        return (
            str(row.get("domain", "")),
            inf if h is None else float(h),
            inf if p is None else float(p),
            str(row.get("note") or ""),
        )

    return sorted(rows, key=key)


def read_pgm(path: Path) -> np.ndarray:
    """Parse a binary 16-bit PGM written by RunArtifacts.write_pgm."""
    raw = Path(path).read_bytes()
    header, _, rest = raw.partition(b"\n65535\n")
    _, dims = header.split(b"\n", 1)
    nx, ny = (int(v) for v in dims.split())
    return np.frombuffer(rest, dtype=">u2").reshape(ny, nx)
