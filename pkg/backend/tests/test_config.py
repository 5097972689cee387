"""Tests for configuration management."""
import pytest
from pydantic import ValidationError

from app.core.config import Settings, get_settings
from app.models.run import NewtonSettings


def test_settings_has_default_values(monkeypatch: pytest.MonkeyPatch) -> None:
    """Settings should provide the documented solver defaults."""
    monkeypatch.delenv("LANE_EMDEN_OUTPUT_ROOT", raising=False)
    settings = Settings(_env_file=None)

    assert str(settings.output_root) == "runs"
    assert settings.jobs == 1
    assert settings.newton_tol == 1e-10
    assert settings.newton_max_iter == 50
    assert settings.backtrack == 0.5
    assert settings.min_step == 1e-4
    assert settings.dp_initial == 0.5
    assert settings.dp_min == 1e-3


def test_settings_loads_env_vars(monkeypatch: pytest.MonkeyPatch) -> None:
    """LANE_EMDEN_* variables override defaults."""
    monkeypatch.setenv("LANE_EMDEN_JOBS", "4")
    monkeypatch.setenv("LANE_EMDEN_NEWTON_TOL", "1e-9")
    settings = Settings(_env_file=None)

    assert settings.jobs == 4
    assert settings.newton_tol == 1e-9


def test_settings_rejects_invalid_values(monkeypatch: pytest.MonkeyPatch) -> None:
    """A backtracking factor outside (0, 1) is a validation error."""
    monkeypatch.setenv("LANE_EMDEN_BACKTRACK", "1.5")
    with pytest.raises(ValidationError):
        Settings(_env_file=None)


def test_get_settings_is_cached() -> None:
    """get_settings() returns the same instance until the cache is cleared."""
    assert get_settings() is get_settings()


def test_newton_settings_from_settings(monkeypatch: pytest.MonkeyPatch) -> None:
    """NewtonSettings picks up process-level overrides."""
    monkeypatch.setenv("LANE_EMDEN_NEWTON_MAX_ITER", "7")
    get_settings.cache_clear()

    s = NewtonSettings.from_settings()

    assert s.max_iter == 7
    assert s.tol == 1e-10


def test_newton_settings_rejects_nonpositive_tolerance() -> None:
    """tolerance > 0 and max iterations >= 1."""
    with pytest.raises(ValidationError):
        NewtonSettings(tol=0.0)
    with pytest.raises(ValidationError):
        NewtonSettings(max_iter=0)
