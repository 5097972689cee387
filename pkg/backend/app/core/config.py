"""Configuration management using pydantic-settings."""
from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from LANE_EMDEN_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="LANE_EMDEN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Output
    output_root: Path = Path("runs")

    # Runtime
    log_level: str = "INFO"
    jobs: int = Field(default=1, ge=1)

    # Newton defaults
    newton_tol: float = Field(default=1e-10, gt=0)
    newton_max_iter: int = Field(default=50, ge=1)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    min_step: float = Field(default=1e-4, gt=0)
    linear_rtol: float = Field(default=1e-10, gt=0)

    # Continuation defaults
    dp_initial: float = Field(default=0.5, gt=0)
    dp_min: float = Field(default=1e-3, gt=0)


@lru_cache
def get_settings() -> Settings:
    """Return cached settings instance."""
    return Settings()
