"""Run configuration and solver settings models."""
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import Settings, get_settings
from app.models.domain import DomainSpec, Point


class NewtonSettings(BaseModel):
    """Newton iteration controls."""

    model_config = ConfigDict(frozen=True)

    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=50, ge=1)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    min_step: float = Field(default=1e-4, gt=0)
    linear_rtol: float = Field(default=1e-10, gt=0)

    @classmethod
    def from_settings(cls, settings: Optional[Settings] = None) -> "NewtonSettings":
        """Build defaults from the process settings (LANE_EMDEN_* env)."""
        s = settings or get_settings()
        return cls(
            tol=s.newton_tol,
            max_iter=s.newton_max_iter,
            backtrack=s.backtrack,
            min_step=s.min_step,
            linear_rtol=s.linear_rtol,
        )


class DiagnosticsToggles(BaseModel):
    """Which diagnostics to compute at report p-values, and their parameters."""

    peaks: bool = True
    energy: bool = True
    profile: bool = True
    off_peak: bool = True
    bounds: bool = True
    decomposition: bool = True
    height_floor: float = Field(default=1.0, gt=0)
    cluster_radius: Optional[float] = Field(default=None, gt=0)
    delta: Optional[float] = Field(default=None, gt=0)
    r_compare: float = Field(default=5.0, gt=0)
    gamma: float = Field(default=1.0, gt=0, lt=2)


class BubbleStart(BaseModel):
    """Start the branch from a superposition of bubbles instead of the eigenfunction."""

    p: float = Field(ge=10)
    centers: list[Point] = Field(min_length=1)


class SweepSpec(BaseModel):
    """Independent entries for ``sweep``: grid spacings or oracle exponents."""

    h_list: list[float] = Field(default_factory=list)
    p_list: list[float] = Field(default_factory=list)
    oracle_only: bool = False

    @model_validator(mode="after")
    def _check_entries(self) -> "SweepSpec":
        if any(h <= 0 for h in self.h_list):
            raise ValueError("sweep h_list entries must be positive")
        if any(p <= 1 for p in self.p_list):
            raise ValueError("sweep p_list entries must exceed 1")
        return self


class RunConfig(BaseModel):
    """A single JSON run document."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="run", min_length=1)
    domain: DomainSpec
    h: float = Field(gt=0)
    p_start: float = Field(gt=1)
    p_end: float = Field(gt=1)
    report_p: list[float] = Field(default_factory=list)
    diagnostics: DiagnosticsToggles = Field(default_factory=DiagnosticsToggles)
    concentration_k: list[int] = Field(default_factory=list)
    concentration_starts: Optional[int] = Field(default=None, ge=1)
    output_dir: Optional[str] = None
    seed: int = 0
    newton: Optional[NewtonSettings] = None
    bubble_start: Optional[BubbleStart] = None
    sweep: Optional[SweepSpec] = None
    green_slice: Optional[Point] = None

    @model_validator(mode="after")
    def _check_ranges(self) -> "RunConfig":
        if self.p_end < self.p_start:
            raise ValueError("p_end must be >= p_start")
        for p in self.report_p:
            if not self.p_start <= p <= self.p_end:
                raise ValueError(f"report p={p} outside [p_start, p_end]")
        if any(k < 1 or k > 6 for k in self.concentration_k):
            raise ValueError("concentration k must lie in 1..6")
        if self.bubble_start is not None and self.bubble_start.p != self.p_start:
            raise ValueError("bubble_start.p must equal p_start")
        # every spacing the run can use, sweep entries included
        h_max = max([self.h, *(self.sweep.h_list if self.sweep else [])])
        toggles = self.diagnostics
        if toggles.cluster_radius is not None and toggles.cluster_radius <= 4.0 * h_max:
            raise ValueError(f"diagnostics.cluster_radius must exceed 4h = {4.0 * h_max:g}")
        if toggles.delta is not None and toggles.delta < 5.0 * h_max:
            raise ValueError(f"diagnostics.delta must be at least 5h = {5.0 * h_max:g}")
        return self
