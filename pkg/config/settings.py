"""
Centralized configuration for the LAD domain adaptation toolkit.

Only process-level concerns live here (logging, parallelism, output root).
Training hyperparameters are validated models in models/schemas.py.
"""
import logging
from functools import lru_cache

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix LAD_)."""

    # Logging
    log: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Experiment driver
    default_jobs: int = 1
    output_root: str = "runs"

    model_config = SettingsConfigDict(
        env_prefix="LAD_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("log")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.strip().upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"unknown log level: {value}")
        return level

    @property
    def log_level(self) -> int:
        return logging.getLevelName(self.log)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
