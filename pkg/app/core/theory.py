# app/core/theory.py
"""
Closed-form quantities of the convergence analysis for compressive Oja with
adaptive sensing.

Notation:
  S       noise constant  lambda1*lambda2*d^2/gap^2 + 13*lambda1*d/gap
  eta_hat normalized step  gap*eta/(d-1)
  x       squared sine error 1 - (u_bar . u)^2
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from app.core.errors import OjaError, PhaseError, SpectrumError

LOCAL_CAP = 0.5


@dataclass(frozen=True)
class ProblemParams:
    d: int
    lambda1: float
    lambda2: float
    gap: float
    S: float


@dataclass(frozen=True)
class BoundParams:
    t0: int
    C1: float
    C2: float
    epsilon: float


@dataclass(frozen=True)
class TrackingPlan:
    velocity: float
    eta_hat_star: float
    s_tilde: float
    x_star: float


@dataclass(frozen=True)
class MomentEnvelope:
    a2: float
    b2: float


def noise_constant(d: int, lambda1: float, lambda2: float) -> float:
    gap = lambda1 - lambda2
    return lambda1 * lambda2 * d**2 / gap**2 + 13.0 * lambda1 * d / gap


def compute_params(d: int, lambda1: float, lambda2: float) -> ProblemParams:
    if d < 2:
        raise SpectrumError(f"Dimension must be at least 2, got {d}.")
    if lambda1 <= lambda2:
        raise SpectrumError(
            f"eigengap must be positive (lambda1={lambda1!r} <= lambda2={lambda2!r})."
        )
    if lambda2 < 0:
        raise SpectrumError(f"lambda2 must be non-negative, got {lambda2!r}.")

    S = noise_constant(d, lambda1, lambda2)
    # 13*lambda1*d/gap >= 26 whenever d >= 2, so the warmup condition S >= 2 always holds.
    assert S >= 2.0, S
    return ProblemParams(d=d, lambda1=lambda1, lambda2=lambda2, gap=lambda1 - lambda2, S=S)


def bound_params(p: ProblemParams) -> BoundParams:
    t0 = math.ceil((4.0 * p.S + 1.0) * math.log(p.d / 2.0))
    assert t0 >= 0, t0
    return BoundParams(
        t0=t0,
        C1=4.0 * p.S + 2.0,
        C2=(4.0 * p.S + 1.0) ** 2 / 2.0,
        epsilon=1.0 / p.d,
    )


def warmup_bound(p: ProblemParams, b: BoundParams, t: int) -> float:
    """Upper bound on E[x_t] during warmup: 1 - eps*(1 + 1/(4S))^t, floored at 0."""
    if not 0 <= t <= b.t0:
        raise PhaseError(f"Warmup bound is defined for 0 <= t <= {b.t0}, got t={t}.")
    return max(0.0, 1.0 - b.epsilon * (1.0 + 1.0 / (4.0 * p.S)) ** t)


def local_bound(b: BoundParams, S: float, t: int) -> float:
    if t < b.t0:
        raise PhaseError(f"Local bound is defined for t >= {b.t0}, got t={t}.")
    D = 4.0 * S + (t - b.t0)
    # The local analysis conditions on x <= 0.5.
    return min(LOCAL_CAP, b.C1 / D + b.C2 / D**2)


def bound_curve(p: ProblemParams, b: BoundParams, t: int) -> float:
    if t < 0:
        raise PhaseError(f"Iteration must be non-negative, got {t}.")
    if t < b.t0:
        return max(LOCAL_CAP, warmup_bound(p, b, t))
    return local_bound(b, p.S, t)


def fixed_point(S: float, eta_hat: float) -> float:
    """Stationary squared sine error S*eta_hat/2 under a constant normalized step."""
    if not 0.0 < eta_hat <= 1.0 / S:
        raise OjaError(f"eta_hat must lie in (0, 1/S] = (0, {1.0 / S:.6g}], got {eta_hat!r}.")
    return S * eta_hat / 2.0


def effective_noise(S: float, velocity: float, eta_hat: float) -> float:
    return S + velocity / eta_hat**2 + 2.0 * velocity / eta_hat


def tracking_fixed_point(S: float, velocity: float, eta_hat: float) -> float:
    """Fixed point under drift for an arbitrary constant step: S_tilde*eta_hat/2."""
    if eta_hat <= 0.0:
        raise OjaError(f"eta_hat must be positive, got {eta_hat!r}.")
    return (eta_hat * S + 2.0 * velocity + velocity / eta_hat) / 2.0


def tracking_plan(p: ProblemParams, velocity: float) -> TrackingPlan:
    if not 0.0 <= velocity < 1.0:
        raise OjaError(f"Velocity must lie in [0, 1), got {velocity!r}.")
    if velocity == 0.0:
        return TrackingPlan(velocity=0.0, eta_hat_star=0.0, s_tilde=p.S, x_star=0.0)

    eta_hat_star = math.sqrt(velocity / p.S)
    s_tilde = effective_noise(p.S, velocity, eta_hat_star)
    x_star = velocity + math.sqrt(velocity * p.S)
    if not math.isclose(x_star, s_tilde * eta_hat_star / 2.0, rel_tol=1e-12):
        raise ArithmeticError(
            f"Inconsistent tracking plan: x*={x_star!r}, S~*eta/2={s_tilde * eta_hat_star / 2.0!r}"
        )
    return TrackingPlan(
        velocity=velocity, eta_hat_star=eta_hat_star, s_tilde=s_tilde, x_star=x_star
    )


def moment_envelopes(c2: float, z2: float, p: ProblemParams) -> MomentEnvelope:
    if not (0.0 <= c2 <= 1.0 and 0.0 <= z2 <= 1.0):
        raise OjaError(f"Alignments must lie in [0, 1], got c2={c2!r}, z2={z2!r}.")
    return MomentEnvelope(a2=p.gap * c2 + p.lambda2, b2=p.gap * z2 + p.lambda2)


def one_step_bound(c2: float, eta_hat: float, S: float) -> float:
    """Lower bound on E[c_{t+1}^2 | c_t^2 = c2] after one step."""
    return c2 + 2.0 * eta_hat * c2 * (1.0 - c2) - S * c2 * eta_hat**2


def drift_one_step_bound(c2: float, eta_hat: float, S: float, velocity: float) -> float:
    return one_step_bound(c2, eta_hat, effective_noise(S, velocity, eta_hat))
