"""Shared test fixtures and configuration."""
import os
from typing import Iterator

import pytest

from app.core.config import get_settings
from app.models.domain import Disk
from app.services.geometry import Grid, build_grid
from app.services.solver import Field, continue_in_p

UNIT_DISK = Disk(center=(0.0, 0.0), radius=1.0)


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch: pytest.MonkeyPatch, tmp_path) -> Iterator[None]:
    """Clear LANE_EMDEN_* variables and point the output root at a temp dir."""
    for key in list(os.environ):
        if key.upper().startswith("LANE_EMDEN_"):
            monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("LANE_EMDEN_OUTPUT_ROOT", str(tmp_path / "runs"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def disk_grid() -> Grid:
    """Unit disk at h = 2/64."""
    return build_grid(UNIT_DISK, 2.0 / 64.0)


@pytest.fixture(scope="session")
def disk_solution_p3(disk_grid: Grid) -> Field:
    """Positive solution at p = 3, continued from p = 2."""
    branch = continue_in_p(disk_grid, 2.0, 3.0)
    branch.raise_for_status()
    return branch.field_at(3.0)


@pytest.fixture(scope="session")
def fine_disk_grid() -> Grid:
    """Unit disk at h = 2/128, fine enough to resolve the p = 10 peak."""
    return build_grid(UNIT_DISK, 2.0 / 128.0)
