"""Configuration module for the GGM directional tests.

This module exposes a Config object which loads optional tuning knobs from
environment variables (or a `.env` file) and falls back to defaults that
are safe to store in code.
"""

import os
from dotenv import load_dotenv
from typing import Optional
from pathlib import Path


class Config:
    """Application configuration loaded from environment variables."""

    def __init__(self):
        # Load environment variables from .env file (if present)
        load_dotenv()

        # Numerical tolerances
        self.quad_tol: float = self._get_float_env("GGM_QUAD_TOL", 1e-8)
        self.ips_tol: float = self._get_float_env("GGM_IPS_TOL", 1e-10)
        self.ips_max_sweeps: int = self._get_int_env("GGM_IPS_MAX_SWEEPS", 5000)

        # Simulation defaults
        self.workers: int = self._get_int_env("GGM_WORKERS", 1)
        self.seed: int = self._get_int_env("GGM_SEED", 20190101)

        # Data directory (defaults to a `data/` sibling of the repo root)
        env_data_dir = self._get_optional_env("GGM_DATA_DIR")
        if env_data_dir:
            self.data_dir: Path = Path(env_data_dir).expanduser().resolve()
        else:
            project_root = Path(__file__).resolve().parent.parent
            self.data_dir: Path = (project_root / "data").resolve()

    @staticmethod
    def _get_optional_env(key: str, default: Optional[str] = None) -> Optional[str]:
        return os.getenv(key, default)

    @classmethod
    def _get_float_env(cls, key: str, default: float) -> float:
        value = cls._get_optional_env(key)
        if not value:
            return default
        try:
            parsed = float(value)
        except ValueError:
            raise ValueError(f"Environment variable '{key}' must be a number, got '{value}'")
        if parsed <= 0:
            raise ValueError(f"Environment variable '{key}' must be positive, got '{value}'")
        return parsed

    @classmethod
    def _get_int_env(cls, key: str, default: int) -> int:
        value = cls._get_optional_env(key)
        if not value:
            return default
        try:
            parsed = int(value)
        except ValueError:
            raise ValueError(f"Environment variable '{key}' must be an integer, got '{value}'")
        if parsed < 0:
            raise ValueError(f"Environment variable '{key}' must not be negative, got '{value}'")
        return parsed

    def __repr__(self) -> str:
        return (
            f"Config(quad_tol={self.quad_tol!r}, "
            f"ips_tol={self.ips_tol!r}, "
            f"ips_max_sweeps={self.ips_max_sweeps}, "
            f"workers={self.workers}, "
            f"seed={self.seed}, "
            f"data_dir='{self.data_dir}')"
        )


# Single, importable config instance
config = Config()
