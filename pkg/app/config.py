"""Application configuration using Pydantic settings."""

import logging
import sys
from typing import Optional

from pydantic_settings import BaseSettings
from pythonjsonlogger import jsonlogger


class Settings(BaseSettings):
    """Engine defaults loaded from environment variables."""

    # Logging
    log_level: str = "INFO"
    log_format: str = "json"  # 'json' or 'text'

    # Geometry
    default_tolerance: float = 1e-9
    boundary_guard: float = 1e-12

    # Group enumeration
    max_elements: int = 1_000_000
    default_max_word_len: int = 8

    # Monte Carlo
    mc_samples: int = 200_000
    mc_batch_size: int = 50_000

    # Paths and modulus
    refinement_gap: float = 1e-3
    grid_resolution: int = 64
    max_iterations: int = 10_000

    # Execution
    threads: int = 4

    class Config:
        env_file = ".env"
        case_sensitive = False


settings = Settings()


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """
    Install a single root handler.

    Args:
        level: Logging level name, defaults to settings.log_level
        fmt: 'json' for python-json-logger records, anything else for plain text
    """
    level = (level or settings.log_level).upper()
    fmt = fmt or settings.log_format

    handler = logging.StreamHandler(sys.stderr)
    if fmt == "json":
        handler.setFormatter(
            jsonlogger.JsonFormatter("%(asctime)s %(levelname)s %(name)s %(message)s")
        )
    else:
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)
