# app/cli/schemas.py
from __future__ import annotations

import math

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.theory import ProblemParams, compute_params


class ProblemRequest(BaseModel):
    """Spectrum flags shared by every subcommand."""

    model_config = ConfigDict(extra="forbid")

    d: int = Field(10, description="Ambient dimension (>= 2)")
    lambda1: float = Field(2.0, description="Leading eigenvalue")
    lambda2: float = Field(1.0, description="Second (and tail) eigenvalue")

    @model_validator(mode="after")
    def validate_spectrum(self) -> ProblemRequest:
        self.params()
        return self

    def params(self) -> ProblemParams:
        return compute_params(self.d, self.lambda1, self.lambda2)


class BoundRequest(ProblemRequest):
    velocity: float | None = Field(None, description="Drift velocity V in [0, 1)")

    @field_validator("velocity")
    @classmethod
    def validate_velocity(cls, v: float | None) -> float | None:
        if v is not None and not 0.0 <= v < 1.0:
            raise ValueError(f"velocity must lie in [0, 1), got {v!r}.")
        return v


class TrackRequest(ProblemRequest):
    velocity: float = Field(..., description="Drift velocity V in (0, 1)")
    eta_hat: float | None = Field(None, description="Normalized constant step")

    @field_validator("velocity")
    @classmethod
    def validate_velocity(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError(
                f"velocity must lie in (0, 1), got {v!r}; use `converge` for the stationary case."
            )
        return v

    @field_validator("eta_hat")
    @classmethod
    def validate_eta_hat(cls, v: float | None) -> float | None:
        if v is not None and not (math.isfinite(v) and v > 0):
            raise ValueError(f"eta_hat must be positive, got {v!r}.")
        return v


class DiagnoseRequest(ProblemRequest):
    c2: float = Field(0.5, description="Squared alignment of the probed estimate")
    eta: float | None = Field(None, description="Raw step size (default: theorem warmup step)")
    samples: int = Field(1_000_000, description="Number of (b, v) draws")
    seed: int = Field(0, ge=0)

    @field_validator("c2")
    @classmethod
    def validate_c2(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"c2 must lie in [0, 1], got {v!r}.")
        return v

    @field_validator("eta")
    @classmethod
    def validate_eta(cls, v: float | None) -> float | None:
        if v is not None and not (math.isfinite(v) and v > 0):
            raise ValueError(f"eta must be positive, got {v!r}.")
        return v

    @field_validator("samples")
    @classmethod
    def validate_samples(cls, v: int) -> int:
        if v < 10_000:
            raise ValueError(f"samples must be at least 10000, got {v}.")
        return v
