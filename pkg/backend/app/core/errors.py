"""Exception hierarchy shared by every lab module.

Each class carries a stable ``code`` so the CLI can emit a machine-readable
error record without inspecting messages.
"""
from typing import Any


class LabError(RuntimeError):
    """Base class for all domain errors raised by the lab."""

    code = "lab_error"

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.context = context

    def to_record(self) -> dict[str, Any]:
        """Return the JSON-serializable error record used by the CLI."""
        return {
            "status": "error",
            "error_type": type(self).__name__,
            "code": self.code,
            "message": str(self),
            "context": {k: _plain(v) for k, v in self.context.items()},
        }


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return repr(value)


# --- geometry ---


class GeometryError(LabError):
    code = "geometry"


class FeatureTooSmall(GeometryError):
    code = "feature_too_small"


class DisconnectedInterior(GeometryError):
    code = "disconnected_interior"


# --- elliptic solver ---


class SolverError(LabError):
    code = "solver"


class NewtonStalled(SolverError):
    code = "newton_stalled"


class ConvergedToZero(SolverError):
    code = "converged_to_zero"


class SignChangingSolution(SolverError):
    code = "sign_changing_solution"


class LinearSolveFailed(SolverError):
    code = "linear_solve_failed"


class EigSolveFailed(SolverError):
    code = "eig_solve_failed"


class CenterOutside(SolverError):
    code = "center_outside"


class ContinuationStalled(SolverError):
    code = "continuation_stalled"


# --- radial oracle ---


class OracleError(LabError):
    code = "oracle"


class NoZeroFound(OracleError):
    code = "no_zero_found"


# --- Green function / concentration points ---


class GreenError(LabError):
    code = "green"


class CoincidentPoints(GreenError):
    code = "coincident_points"


class PointOutside(GreenError):
    code = "point_outside"


class NoSolutionFound(GreenError):
    code = "no_solution_found"


# --- diagnostics ---


class DiagnosticsError(LabError):
    code = "diagnostics"


class NoPeaks(DiagnosticsError):
    code = "no_peaks"


class PeakUnresolved(DiagnosticsError):
    code = "peak_unresolved"


class EmptyTestSet(DiagnosticsError):
    code = "empty_test_set"


class AnnulusUnresolved(DiagnosticsError):
    code = "annulus_unresolved"


class BallOverlap(DiagnosticsError):
    code = "ball_overlap"


class QuadratureUnresolved(DiagnosticsError):
    code = "quadrature_unresolved"


class IllConditionedFit(DiagnosticsError):
    code = "ill_conditioned_fit"
