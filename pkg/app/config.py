# app/config.py
from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

ENV_PREFIX = "COMPRESSIVE_OJA_"
LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


def _load_env_for_local_dev() -> None:
    """
    Load .env for local development only.
    - Does NOT override existing env vars.
    - Looks for .env in repo root first, then current working directory.
    """
    candidates = [
        # repo root (one level up from app/config.py -> repo/)
        Path(__file__).resolve().parents[1] / ".env",
        Path.cwd() / ".env",
    ]
    for p in candidates:
        if p.exists():
            load_dotenv(dotenv_path=p, override=False)
            return


class Settings(BaseModel):
    output_dir: Path | None = Field(None, description="Base directory for relative --out paths")
    workers: int = Field(1, ge=1, description="Processes used to run trials")
    log_level: str = Field("WARNING", description="Root log level for the CLI")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        v = (v or "WARNING").strip().upper()
        if v not in LOG_LEVELS:
            raise ValueError(f"Invalid log level '{v}'.")
        return v

    def resolve_output(self, path: str | Path) -> Path:
        path = Path(path)
        if path.is_absolute() or self.output_dir is None:
            return path
        return self.output_dir / path


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    _load_env_for_local_dev()
    output_dir = (os.getenv(f"{ENV_PREFIX}OUTPUT_DIR") or "").strip()
    # Raw strings go through validation, so a bad value is a ValidationError.
    return Settings.model_validate(
        {
            "output_dir": Path(output_dir) if output_dir else None,
            "workers": (os.getenv(f"{ENV_PREFIX}WORKERS") or "1").strip(),
            "log_level": os.getenv(f"{ENV_PREFIX}LOG_LEVEL") or "WARNING",
        }
    )
