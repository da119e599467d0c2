# app/storage/schemas.py
from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class SeriesRow(BaseModel):
    t: int = Field(ge=0)
    mean_sin2: float = Field(ge=0.0, le=1.0)
    p20: float = Field(ge=0.0, le=1.0)
    p80: float = Field(ge=0.0, le=1.0)
    bound_sin2: float = Field(ge=0.0, le=1.0)


class SeriesDocument(BaseModel):
    """JSON form of an aggregated series: the run config, its digest and the rows."""

    config: dict[str, Any]
    digest: str
    rows: list[SeriesRow] = Field(min_length=1)


class SweepRow(BaseModel):
    velocity: float = Field(gt=0.0, lt=1.0)
    eta_hat: float = Field(gt=0.0)
    x_star: float = Field(ge=0.0)
    steady_state: float = Field(ge=0.0, le=1.0)


class SweepDocument(BaseModel):
    """JSON form of a velocity sweep: the shared run config and one row per velocity."""

    config: dict[str, Any]
    rows: list[SweepRow] = Field(min_length=1)
