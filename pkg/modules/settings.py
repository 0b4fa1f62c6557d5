#!/usr/bin/env python3
"""
🔧 Process Settings
===================
Environment-driven defaults (prefix PFLSIM_, optionally from a .env file).
"""

from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PFLSIM_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    workers: int = Field(1, ge=1)
    results_dir: Path = Path("results")
    mnist_dir: Optional[Path] = None


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
