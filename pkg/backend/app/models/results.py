"""Result models: concentration configurations, peaks, and diagnostics reports."""
import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from app.models.domain import Point

SQRT_E = math.sqrt(math.e)


class Configuration(BaseModel):
    """Candidate concentration set: k points with positive weights."""

    model_config = ConfigDict(frozen=True)

    points: list[Point] = Field(min_length=1)
    weights: list[float] = Field(default_factory=list)
    residual_norm: Optional[float] = None
    green_backend_accuracy: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def _default_weights(cls, data):
        if isinstance(data, dict) and not data.get("weights") and data.get("points"):
            data = {**data, "weights": [SQRT_E] * len(data["points"])}
        return data

    @model_validator(mode="after")
    def _check(self) -> "Configuration":
        if len(self.weights) != len(self.points):
            raise ValueError("one weight per point is required")
        if any(not m > 0 for m in self.weights):
            raise ValueError("weights must be positive")
        for i, a in enumerate(self.points):
            for b in self.points[i + 1:]:
                if a == b:
                    raise ValueError("configuration points must be pairwise distinct")
        return self

    @computed_field  # type: ignore[prop-decorator]
    @property
    def k(self) -> int:
        return len(self.points)


class Peak(BaseModel):
    location: Point
    height: float = Field(gt=0)
    eps: float = Field(gt=0)
    lattice_index: tuple[int, int]


class PeakSet(BaseModel):
    peaks: list[Peak]
    cluster_radius: float = Field(gt=0)
    p: float

    @computed_field  # type: ignore[prop-decorator]
    @property
    def k(self) -> int:
        return len(self.peaks)


class Decomposition(BaseModel):
    """Green-representation split u(y) = A + B + C + tail at one peak."""

    radius: float
    A: float
    B: float
    C: float
    tail: float
    mass: float
    m_est: float
    identity_defect: float
    log_eps_defect: float = 0.0


class PeakBounds(BaseModel):
    """Fitted decay-envelope and uniform-bound constants on one peak annulus."""

    gamma: float
    R: float
    s_max: float
    envelope_constant: float
    uniform_constant: float
    power_le_one: bool
    above_minus_p: bool


class DiagnosticsReport(BaseModel):
    p: float
    h: float
    k: int
    peaks: PeakSet
    max_norm: float
    energy: Optional[float] = None
    energy_ratio: Optional[float] = None
    energy_cross_check: Optional[float] = None
    sqrtp_sup: Optional[float] = None
    green_sup: Optional[float] = None
    profile_errors: list[Optional[float]] = Field(default_factory=list)
    bounds: list[Optional[PeakBounds]] = Field(default_factory=list)
    decompositions: list[Optional[Decomposition]] = Field(default_factory=list)
    system_residual: Optional[float] = None
    warnings: list[str] = Field(default_factory=list)
