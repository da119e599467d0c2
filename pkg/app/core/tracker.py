# app/core/tracker.py
"""
Streaming leading-eigenvector estimators: the adaptive compressive Oja step,
the fully-sampled Oja baseline, their step-size schedules and the trajectory
runner.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from app.core.errors import DegenerateInputError, OjaError, PhaseError, ScheduleError
from app.core.model import (
    NORM_FLOOR,
    DriftParams,
    Measurement,
    SpectralCovariance,
    UnitVector,
    check_dims,
    check_orthogonal,
    normalize,
    project_orthogonal,
    rotate_leading,
    sample_orthogonal,
    sample_sphere,
)
from app.core.theory import ProblemParams, bound_params

logger = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = 1000
DRAW_BLOCK = 4096


class ScheduleVariant(str, Enum):
    WARMUP_CONSTANT = "warmup-const"
    THEOREM_LOCAL = "theorem-local"
    THEOREM_FULL = "theorem"
    CONSTANT_HAT = "constant"
    INVERSE_T = "inverse-t"


class Algorithm(str, Enum):
    ADAPTIVE = "adaptive"
    FULL = "full"


def eta_hat_to_eta(eta_hat: float, d: int, gap: float) -> float:
    """Raw step from the normalized one: eta = (d-1)*eta_hat/gap."""
    if gap <= 0:
        raise ScheduleError(f"eigengap must be positive, got {gap!r}.")
    if d < 2:
        raise ScheduleError(f"Dimension must be at least 2, got {d}.")
    return (d - 1) * eta_hat / gap


def eta_to_eta_hat(eta: float, d: int, gap: float) -> float:
    if gap <= 0:
        raise ScheduleError(f"eigengap must be positive, got {gap!r}.")
    if d < 2:
        raise ScheduleError(f"Dimension must be at least 2, got {d}.")
    return gap * eta / (d - 1)


@dataclass(frozen=True)
class StepSchedule:
    """
    Learning-rate policy.

    The local phase uses eta_hat_t = K / (T + (t - t0)); the theorem instance
    is K = 2, T = 4S, whose first local step equals 1/(2S).
    """

    variant: ScheduleVariant
    d: int
    gap: float
    S: float
    eta0: float = 0.0
    K: float = 2.0
    T: float = 1.0
    t0: int = 0
    eta_hat: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.variant in (ScheduleVariant.WARMUP_CONSTANT, ScheduleVariant.THEOREM_FULL):
            if not (math.isfinite(self.eta0) and self.eta0 > 0):
                raise ScheduleError(f"Warmup step must be positive and finite, got {self.eta0!r}.")
        if self.variant in (ScheduleVariant.THEOREM_LOCAL, ScheduleVariant.THEOREM_FULL):
            if self.K <= 0 or self.T <= 0:
                raise ScheduleError("Local schedule needs K > 0 and T > 0.")
            if self.K / self.T > (1.0 + 1e-12) / (2.0 * self.S):
                raise ScheduleError(
                    f"First local step K/T={self.K / self.T:.6g} exceeds 1/(2S)={1.0 / (2.0 * self.S):.6g}."
                )
            if self.t0 < 0:
                raise ScheduleError(f"Phase switch must be non-negative, got {self.t0}.")
        if self.variant is ScheduleVariant.CONSTANT_HAT:
            if not (math.isfinite(self.eta_hat) and self.eta_hat > 0):
                raise ScheduleError(f"eta_hat must be positive and finite, got {self.eta_hat!r}.")
        if self.variant is ScheduleVariant.INVERSE_T:
            if not (math.isfinite(self.scale) and self.scale > 0):
                raise ScheduleError(f"Scale must be positive and finite, got {self.scale!r}.")

    @classmethod
    def theorem(cls, p: ProblemParams) -> StepSchedule:
        return cls(
            variant=ScheduleVariant.THEOREM_FULL,
            d=p.d,
            gap=p.gap,
            S=p.S,
            eta0=(p.d - 1) / (2.0 * p.S * p.gap),
            K=2.0,
            T=4.0 * p.S,
            t0=bound_params(p).t0,
        )

    @classmethod
    def theorem_local(cls, p: ProblemParams) -> StepSchedule:
        return cls(
            variant=ScheduleVariant.THEOREM_LOCAL,
            d=p.d,
            gap=p.gap,
            S=p.S,
            K=2.0,
            T=4.0 * p.S,
            t0=bound_params(p).t0,
        )

    @classmethod
    def warmup_constant(cls, p: ProblemParams) -> StepSchedule:
        return cls(
            variant=ScheduleVariant.WARMUP_CONSTANT,
            d=p.d,
            gap=p.gap,
            S=p.S,
            eta0=(p.d - 1) / (2.0 * p.S * p.gap),
        )

    @classmethod
    def constant(cls, p: ProblemParams, eta_hat: float) -> StepSchedule:
        return cls(
            variant=ScheduleVariant.CONSTANT_HAT, d=p.d, gap=p.gap, S=p.S, eta_hat=eta_hat
        )

    @classmethod
    def inverse_t(cls, p: ProblemParams, scale: float = 1.0) -> StepSchedule:
        return cls(variant=ScheduleVariant.INVERSE_T, d=p.d, gap=p.gap, S=p.S, scale=scale)

    @classmethod
    def from_name(
        cls,
        name: str,
        p: ProblemParams,
        eta_hat: float | None = None,
        scale: float = 1.0,
    ) -> StepSchedule:
        try:
            variant = ScheduleVariant(name)
        except ValueError:
            allowed = [v.value for v in ScheduleVariant]
            raise ScheduleError(f"Unknown schedule '{name}'. Allowed: {allowed}") from None

        if variant is ScheduleVariant.THEOREM_FULL:
            return cls.theorem(p)
        if variant is ScheduleVariant.THEOREM_LOCAL:
            return cls.theorem_local(p)
        if variant is ScheduleVariant.WARMUP_CONSTANT:
            return cls.warmup_constant(p)
        if variant is ScheduleVariant.CONSTANT_HAT:
            if eta_hat is None:
                raise ScheduleError("The constant schedule needs eta_hat.")
            return cls.constant(p, eta_hat)
        return cls.inverse_t(p, scale)


def schedule_eta(s: StepSchedule, t: int) -> float:
    if t < 0:
        raise PhaseError(f"Iteration must be non-negative, got {t}.")

    variant = s.variant
    if variant is ScheduleVariant.WARMUP_CONSTANT:
        return s.eta0
    if variant is ScheduleVariant.CONSTANT_HAT:
        return eta_hat_to_eta(s.eta_hat, s.d, s.gap)
    if variant is ScheduleVariant.INVERSE_T:
        if t < 1:
            raise PhaseError("The 1/t schedule starts at t=1.")
        return s.scale / t
    if variant is ScheduleVariant.THEOREM_FULL and t < s.t0:
        return s.eta0
    if t < s.t0:
        raise PhaseError(f"Local schedule queried at t={t} < t0={s.t0}.")
    return eta_hat_to_eta(s.K / (s.T + (t - s.t0)), s.d, s.gap)


@dataclass(frozen=True)
class TrackerState:
    estimate: UnitVector
    iteration: int = 0


class Checkpoint(NamedTuple):
    t: int
    sin2: float
    cos2: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    checkpoints: list[Checkpoint]
    final_estimate: UnitVector

    def __post_init__(self) -> None:
        ts = [c.t for c in self.checkpoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise OjaError("Checkpoint iterations must be strictly increasing.")

    @property
    def iterations(self) -> np.ndarray:
        return np.array([c.t for c in self.checkpoints], dtype=np.int64)

    @property
    def sin2(self) -> np.ndarray:
        return np.array([c.sin2 for c in self.checkpoints], dtype=np.float64)


def _check_eta(eta: float) -> None:
    if not (math.isfinite(eta) and eta > 0):
        raise ScheduleError(f"Step size must be positive and finite, got {eta!r}.")


def adaptive_step(state: TrackerState, m: Measurement, eta: float) -> TrackerState:
    """
    One compressive Oja update from the two readings only:
    u_hat = u (1 + eta g^2) + b (eta g h), then renormalize.
    """
    _check_eta(eta)
    check_orthogonal(state.estimate, m.probe)
    u_hat = state.estimate.coords * (1.0 + eta * m.g**2) + m.probe.coords * (eta * m.g * m.h)
    return TrackerState(estimate=normalize(u_hat), iteration=state.iteration + 1)


def full_step(state: TrackerState, v: np.ndarray, eta: float) -> TrackerState:
    _check_eta(eta)
    u = state.estimate.coords
    check_dims(u.size, len(v))
    u_hat = u + eta * v * float(v @ u)
    return TrackerState(estimate=normalize(u_hat), iteration=state.iteration + 1)


def _check_pairing(cov: SpectralCovariance, schedule: StepSchedule, algo: Algorithm) -> None:
    if schedule.d != cov.dim or not math.isclose(schedule.gap, cov.gap, rel_tol=1e-12):
        raise ScheduleError(
            f"Schedule built for d={schedule.d}, gap={schedule.gap!r} "
            f"cannot drive a covariance with d={cov.dim}, gap={cov.gap!r}."
        )
    if algo is Algorithm.ADAPTIVE and schedule.variant is ScheduleVariant.INVERSE_T:
        logger.warning("Running adaptive sensing with a 1/t schedule: not covered by the theorem.")
    if algo is Algorithm.FULL and schedule.variant in (
        ScheduleVariant.THEOREM_FULL,
        ScheduleVariant.THEOREM_LOCAL,
    ):
        logger.info("Theorem schedule applied to the fully-sampled baseline.")


def run(
    cov: SpectralCovariance,
    schedule: StepSchedule,
    *,
    algo: Algorithm,
    iters: int,
    rng: np.random.Generator,
    stride: int | None = None,
    drift: DriftParams | None = None,
    u0: UnitVector | None = None,
) -> Trajectory:
    """
    Run one trajectory and record (t, sin^2, cos^2) against the current leading
    eigenvector at t=0, every `stride` iterations and at t=iters.

    Iteration k (1-based) uses schedule_eta(schedule, k); a theorem-local
    schedule starts its clock at t0 instead.

    Inputs are validated once up front and the loop works on raw arrays. It
    consumes the generator in the same order as calling drift_step,
    sample_data, sample_orthogonal and adaptive_step/full_step per iteration,
    so both paths give the same trajectory up to rounding.
    """
    if iters < 1:
        raise OjaError(f"iters must be at least 1, got {iters}.")
    if stride is None:
        stride = max(1, iters // DEFAULT_CHECKPOINTS)
    if stride < 1:
        raise OjaError(f"stride must be at least 1, got {stride}.")
    algo = Algorithm(algo)
    _check_pairing(cov, schedule, algo)

    if u0 is None:
        u0 = sample_sphere(cov.dim, rng)
    check_dims(u0.dim, cov.dim)

    clock = schedule.t0 - 1 if schedule.variant is ScheduleVariant.THEOREM_LOCAL else 0
    adaptive = algo is Algorithm.ADAPTIVE
    drifting = drift is not None and drift.velocity > 0.0
    # per-iteration draw layout: [drift direction], sample, [probe]
    at_sample = int(drifting)
    draws = at_sample + 1 + int(adaptive)

    d = cov.dim
    scale = np.sqrt(cov.eigenvalues)
    basis = cov.basis
    u = u0.coords.copy()

    def record(t: int) -> Checkpoint:
        cos2 = min(1.0, float(basis[:, 0] @ u) ** 2)
        return Checkpoint(t=t, sin2=1.0 - cos2, cos2=cos2)

    def redraw_orthogonal(coords: np.ndarray) -> np.ndarray:
        return sample_orthogonal(UnitVector(coords), rng).coords

    checkpoints = [record(0)]
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k < iters:
            block = min(DRAW_BLOCK, iters - k)
            z = rng.standard_normal((block, draws, d))
            samples = None if drifting else (z[:, at_sample] * scale) @ basis.T

            for j in range(block):
                k += 1
                if drifting:
                    q = project_orthogonal(z[j, 0], basis[:, 0])
                    if q is None:
                        q = redraw_orthogonal(basis[:, 0])
                    basis = rotate_leading(basis, q, drift.velocity)
                    v = basis @ (scale * z[j, at_sample])
                else:
                    v = samples[j]
                eta = schedule_eta(schedule, clock + k)

                if adaptive:
                    b = project_orthogonal(z[j, -1], u)
                    if b is None:
                        b = redraw_orthogonal(u)
                    g = float(u @ v)
                    h = float(b @ v)
                    u = u * (1.0 + eta * g * g) + b * (eta * g * h)
                else:
                    u = u + eta * v * float(v @ u)

                norm = math.sqrt(float(u @ u))
                if not (math.isfinite(norm) and norm > NORM_FLOOR):
                    raise DegenerateInputError(
                        f"Estimate degenerated at t={k} (norm {norm!r}); the step size "
                        f"{eta!r} is too large."
                    )
                u = u / norm

                if k % stride == 0 or k == iters:
                    checkpoints.append(record(k))

    return Trajectory(checkpoints=checkpoints, final_estimate=UnitVector(u))
