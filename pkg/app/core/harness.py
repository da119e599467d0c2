# app/core/harness.py
"""
Monte Carlo experiment orchestration: multi-trial runs, percentile
aggregation, steady-state estimation and moment diagnostics.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from tqdm import tqdm

from app.core.errors import OjaError, TrialError
from app.core.model import (
    DriftParams,
    SpectralCovariance,
    UnitVector,
    make_covariance,
    normalize,
    sample_data,
    sample_orthogonal_batch,
)
from app.core.theory import (
    MomentEnvelope,
    ProblemParams,
    bound_curve,
    bound_params,
    compute_params,
    moment_envelopes,
    one_step_bound,
    tracking_plan,
)
from app.core.tracker import (
    Algorithm,
    ScheduleVariant,
    StepSchedule,
    eta_to_eta_hat,
    run,
)

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ["t", "mean_sin2", "p20", "p80", "bound_sin2"]
SWEEP_COLUMNS = ["velocity", "eta_hat", "x_star", "steady_state"]
PERCENTILES = (20.0, 80.0)
SE_MULTIPLIER = 4.0
PROBE_MOMENT_TOL = 5e-3
DEFAULT_TAIL_FRAC = 0.2
DIAGNOSTIC_CHUNK = 100_000


def trial_seed(base_seed: int, trial_index: int) -> int:
    """
    64-bit seed for one trial, derived from (base_seed, trial_index) alone so
    that changing the trial count never perturbs earlier trials.
    """
    key = f"{int(base_seed)}|{int(trial_index)}".encode()
    digest = hashlib.sha256(key).hexdigest()
    return int(digest[:16], 16)


class ScheduleSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: ScheduleVariant = Field(ScheduleVariant.THEOREM_FULL, description="Schedule variant")
    eta_hat: float | None = Field(None, description="Normalized constant step (constant schedule)")
    scale: float = Field(1.0, description="Numerator of the 1/t schedule")

    @field_validator("eta_hat")
    @classmethod
    def validate_eta_hat(cls, v: float | None) -> float | None:
        if v is not None and not (math.isfinite(v) and v > 0):
            raise ValueError(f"eta_hat must be positive and finite, got {v!r}.")
        return v

    @field_validator("scale")
    @classmethod
    def validate_scale(cls, v: float) -> float:
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"scale must be positive and finite, got {v!r}.")
        return v

    @model_validator(mode="after")
    def validate_constant_has_step(self) -> ScheduleSpec:
        if self.name is ScheduleVariant.CONSTANT_HAT and self.eta_hat is None:
            raise ValueError("The constant schedule needs eta_hat.")
        return self

    def build(self, p: ProblemParams) -> StepSchedule:
        return StepSchedule.from_name(self.name.value, p, eta_hat=self.eta_hat, scale=self.scale)


class ExperimentConfig(BaseModel):
    """
    Everything that determines a multi-trial run. Two equal configs produce
    bitwise-identical series.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    d: int = Field(10, ge=2, description="Ambient dimension")
    lambda1: float = Field(2.0, description="Leading eigenvalue")
    lambda2: float = Field(1.0, description="Second eigenvalue")
    tail: list[float] | None = Field(None, description="lambda3..lambda_d (default flat at lambda2)")
    orientation_seed: int | None = Field(None, description="Seed of a random basis; None = identity")
    algo: Algorithm = Field(Algorithm.ADAPTIVE)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    iters: int = Field(200_000, ge=1)
    trials: int = Field(20, ge=1)
    base_seed: int = Field(0, ge=0)
    stride: int | None = Field(None, ge=1)
    velocity: float | None = Field(None, description="Per-step drift of the leading eigenvector")

    @field_validator("velocity")
    @classmethod
    def validate_velocity(cls, v: float | None) -> float | None:
        if v is not None and not 0.0 <= v < 1.0:
            raise ValueError(f"velocity must lie in [0, 1), got {v!r}.")
        return v

    @model_validator(mode="after")
    def validate_problem(self) -> ExperimentConfig:
        # Build once so spectrum and schedule errors surface at construction.
        self.schedule.build(self.params())
        self.covariance()
        return self

    def params(self) -> ProblemParams:
        return compute_params(self.d, self.lambda1, self.lambda2)

    def covariance(self) -> SpectralCovariance:
        return make_covariance(
            self.d, self.lambda1, self.lambda2, tail=self.tail, orientation=self.orientation_seed
        )

    def step_schedule(self) -> StepSchedule:
        return self.schedule.build(self.params())

    def drift(self) -> DriftParams | None:
        return None if self.velocity is None else DriftParams(self.velocity)

    def resolved_stride(self) -> int:
        return self.stride if self.stride is not None else max(1, self.iters // 1000)

    def carries_bound(self) -> bool:
        return (
            self.algo is Algorithm.ADAPTIVE
            and self.schedule.name is ScheduleVariant.THEOREM_FULL
            and self.velocity is None
        )

    def describe(self) -> dict[str, Any]:
        out = self.model_dump(mode="json")
        out["bound"] = "theorem" if self.carries_bound() else "none"
        return out


def config_digest(config: dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class AggregateSeries:
    frame: pd.DataFrame
    config: dict[str, Any]
    digest: str

    def __post_init__(self) -> None:
        if list(self.frame.columns) != SERIES_COLUMNS:
            raise OjaError(f"Series columns must be {SERIES_COLUMNS}, got {list(self.frame.columns)}.")
        t = self.frame["t"].to_numpy()
        if np.any(np.diff(t) <= 0):
            raise OjaError("Checkpoint iterations must be strictly increasing.")
        values = self.frame[SERIES_COLUMNS[1:]].to_numpy()
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise OjaError("Series values must lie in [0, 1].")
        if np.any(self.frame["p20"].to_numpy() > self.frame["p80"].to_numpy()):
            raise OjaError("p20 exceeds p80.")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def rows(self) -> list[tuple[int, float, float, float, float]]:
        return [
            (int(r.t), float(r.mean_sin2), float(r.p20), float(r.p80), float(r.bound_sin2))
            for r in self.frame.itertuples(index=False)
        ]


def aggregate(
    t: np.ndarray,
    sin2: np.ndarray,
    bound: np.ndarray,
    config: dict[str, Any],
) -> AggregateSeries:
    """
    Collapse a (trials, checkpoints) matrix into mean and 20th/80th percentiles.

    Percentiles interpolate linearly between order statistics (numpy's
    "linear" method): with n trials the q-th percentile sits at 0-based
    position q/100*(n-1). For n=20 the 20th percentile is
    x(4) + 0.8*(x(5) - x(4)) and the 80th is x(16) + 0.2*(x(17) - x(16)),
    1-based order statistics.
    """
    ordered = np.sort(np.asarray(sin2, dtype=np.float64), axis=0)
    if ordered.ndim != 2 or ordered.shape[1] != len(t):
        raise OjaError(f"sin2 matrix shape {ordered.shape} does not match {len(t)} checkpoints.")
    # Sorting first makes the mean independent of trial order.
    mean = ordered.mean(axis=0)
    p20, p80 = np.percentile(ordered, PERCENTILES, axis=0, method="linear")
    frame = pd.DataFrame(
        {
            "t": np.asarray(t, dtype=np.int64),
            "mean_sin2": mean,
            "p20": p20,
            "p80": p80,
            "bound_sin2": np.asarray(bound, dtype=np.float64),
        },
        columns=SERIES_COLUMNS,
    )
    return AggregateSeries(frame=frame, config=config, digest=config_digest(config))


def _run_trial(cfg: ExperimentConfig, trial_index: int) -> tuple[np.ndarray, np.ndarray]:
    # Module level so ProcessPoolExecutor can pickle it.
    rng = np.random.default_rng(trial_seed(cfg.base_seed, trial_index))
    trajectory = run(
        cfg.covariance(),
        cfg.step_schedule(),
        algo=cfg.algo,
        iters=cfg.iters,
        rng=rng,
        stride=cfg.resolved_stride(),
        drift=cfg.drift(),
    )
    return trajectory.iterations, trajectory.sin2


def run_trials(
    cfg: ExperimentConfig,
    workers: int = 1,
    progress: bool = False,
) -> AggregateSeries:
    """
    Run cfg.trials independent trajectories and aggregate them per checkpoint.
    The result does not depend on `workers`.
    """
    logger.info(
        "Running %d trial(s) of %d iterations (algo=%s, schedule=%s, workers=%d).",
        cfg.trials,
        cfg.iters,
        cfg.algo.value,
        cfg.schedule.name.value,
        workers,
    )
    indices = range(cfg.trials)
    results: list[tuple[np.ndarray, np.ndarray]] = []

    def collect(outputs: Iterator[tuple[np.ndarray, np.ndarray]]) -> None:
        bar = tqdm(total=cfg.trials, desc="trials", disable=not progress, leave=False)
        with bar:
            for i in indices:
                try:
                    results.append(next(outputs))
                except StopIteration:
                    break
                except Exception as e:
                    raise TrialError(i, e) from e
                bar.update(1)

    if workers <= 1 or cfg.trials == 1:
        collect(map(_run_trial, repeat(cfg), indices))
    else:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.trials)) as pool:
            collect(pool.map(_run_trial, repeat(cfg), indices))

    t_grid = results[0][0]
    sin2 = np.vstack([r[1] for r in results])

    if cfg.carries_bound():
        p = cfg.params()
        b = bound_params(p)
        bound = np.array([bound_curve(p, b, int(t)) for t in t_grid])
    else:
        bound = np.zeros(len(t_grid))

    return aggregate(t_grid, sin2, bound, cfg.describe())


def steady_state(series: AggregateSeries, tail_frac: float = DEFAULT_TAIL_FRAC) -> float:
    """Mean of mean_sin2 over the final ceil(tail_frac * rows) checkpoints."""
    if not 0.0 < tail_frac <= 1.0:
        raise OjaError(f"tail_frac must lie in (0, 1], got {tail_frac!r}.")
    if len(series) == 0:
        raise OjaError("Cannot estimate a steady state from an empty series.")
    window = math.ceil(tail_frac * len(series))
    return float(series.frame["mean_sin2"].iloc[-window:].mean())


def first_crossing(series: AggregateSeries, threshold: float) -> int | None:
    """First checkpoint iteration whose mean error is <= threshold."""
    hits = series.frame.loc[series.frame["mean_sin2"] <= threshold, "t"]
    return None if hits.empty else int(hits.iloc[0])


def fraction_below_bound(series: AggregateSeries, min_t: int = 0) -> float | None:
    if series.config.get("bound") != "theorem":
        return None
    window = series.frame[series.frame["t"] >= min_t]
    if window.empty:
        return None
    return float((window["mean_sin2"] <= window["bound_sin2"]).mean())


def velocity_sweep(
    cfg: ExperimentConfig,
    velocities: Sequence[float],
    tail_frac: float = DEFAULT_TAIL_FRAC,
    workers: int = 1,
    progress: bool = False,
) -> pd.DataFrame:
    """
    Track each drift velocity with adaptive sensing at its drift-optimal
    constant step and set the measured steady state against the predicted
    fixed point x*. cfg supplies the problem, run length, trials and seeds;
    its algorithm, schedule and velocity are replaced per row.
    """
    if not velocities:
        raise OjaError("A sweep needs at least one velocity.")
    p = cfg.params()
    base = cfg.model_dump()

    rows = []
    for velocity in velocities:
        if not 0.0 < velocity < 1.0:
            raise OjaError(f"Sweep velocities must lie in (0, 1), got {velocity!r}.")
        plan = tracking_plan(p, velocity)
        run_cfg = ExperimentConfig.model_validate(
            {
                **base,
                "algo": Algorithm.ADAPTIVE,
                "schedule": {"name": ScheduleVariant.CONSTANT_HAT, "eta_hat": plan.eta_hat_star},
                "velocity": velocity,
            }
        )
        ss = steady_state(run_trials(run_cfg, workers=workers, progress=progress), tail_frac)
        logger.info("V=%.3g: steady state %.6g vs x* %.6g.", velocity, ss, plan.x_star)
        rows.append((velocity, plan.eta_hat_star, plan.x_star, ss))

    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float


@dataclass(frozen=True)
class MomentReport:
    n: int
    c2: float
    est_g2: Estimate
    est_h2: Estimate
    est_gh: Estimate
    est_czgh: Estimate
    est_x: Estimate
    est_y2: Estimate
    est_next_c2: Estimate
    probe_second_moment_max_dev: float
    envelopes: MomentEnvelope
    czgh_floor: float
    next_c2_floor: float

    def checks(self, k: float = SE_MULTIPLIER) -> dict[str, bool]:
        return {
            "g2_within_envelope": self.est_g2.mean <= self.envelopes.a2 + k * self.est_g2.se,
            "h2_within_envelope": self.est_h2.mean <= self.envelopes.b2 + k * self.est_h2.se,
            "gh_zero_mean": abs(self.est_gh.mean) <= k * self.est_gh.se,
            "czgh_above_floor": self.est_czgh.mean >= self.czgh_floor - k * self.est_czgh.se,
            "next_c2_above_bound": self.est_next_c2.mean >= self.next_c2_floor - k * self.est_next_c2.se,
            "probe_moment_isotropic": self.probe_second_moment_max_dev <= PROBE_MOMENT_TOL,
        }


class _Moments:
    def __init__(self) -> None:
        self.n = 0
        self.sums: dict[str, float] = {}
        self.squares: dict[str, float] = {}

    def add(self, **columns: np.ndarray) -> None:
        for name, values in columns.items():
            self.sums[name] = self.sums.get(name, 0.0) + float(values.sum())
            self.squares[name] = self.squares.get(name, 0.0) + float((values * values).sum())

    def estimate(self, name: str) -> Estimate:
        n = self.n
        mean = self.sums[name] / n
        var = max(0.0, (self.squares[name] - n * mean * mean) / (n - 1))
        return Estimate(mean=mean, se=math.sqrt(var / n))


def _readings(
    u: UnitVector,
    cov: SpectralCovariance,
    n: int,
    rng: np.random.Generator,
    chunk: int,
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (g, h, z, probes) in chunks for n independent (b, v) draws at fixed u."""
    lead = cov.leading_eigenvector().coords
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        v = sample_data(cov, rng, size=m)
        probes = sample_orthogonal_batch(u, m, rng)
        g = v @ u.coords
        h = np.einsum("ij,ij->i", probes, v)
        z = probes @ lead
        yield g, h, z, probes
        remaining -= m


def _next_c2(c: float, z: np.ndarray, g: np.ndarray, h: np.ndarray, eta: float) -> np.ndarray:
    x_factor = 1.0 + eta * g * g
    y = eta * g * h
    return (c * x_factor + z * y) ** 2 / (x_factor**2 + y**2)


def moment_diagnostics(
    u: UnitVector,
    cov: SpectralCovariance,
    eta: float,
    n: int,
    rng: np.random.Generator,
    chunk: int = DIAGNOSTIC_CHUNK,
) -> MomentReport:
    """
    Monte Carlo moments of the two readings g = u.v, h = b.v at a fixed
    estimate u, compared with their analytic envelopes.
    """
    if n < 10_000:
        raise OjaError(f"Moment diagnostics need n >= 10000 samples, got {n}.")
    if eta <= 0:
        raise OjaError(f"eta must be positive, got {eta!r}.")

    d = cov.dim
    c = u.dot(cov.leading_eigenvector())
    c2 = min(1.0, c * c)
    p = compute_params(d, cov.lambda1, cov.lambda2)

    moments = _Moments()
    probe_outer = np.zeros((d, d))
    for g, h, z, probes in _readings(u, cov, n, rng, chunk):
        moments.n += len(g)
        x_factor = 1.0 + eta * g * g
        y = eta * g * h
        moments.add(
            g2=g * g,
            h2=h * h,
            gh=g * h,
            czgh=c * z * g * h,
            x=x_factor,
            y2=y * y,
            next_c2=_next_c2(c, z, g, h, eta),
        )
        probe_outer += probes.T @ probes

    target = (np.eye(d) - np.outer(u.coords, u.coords)) / (d - 1)
    probe_dev = float(np.max(np.abs(probe_outer / n - target)))
    mean_z2 = (1.0 - c2) / (d - 1)

    return MomentReport(
        n=n,
        c2=c2,
        est_g2=moments.estimate("g2"),
        est_h2=moments.estimate("h2"),
        est_gh=moments.estimate("gh"),
        est_czgh=moments.estimate("czgh"),
        est_x=moments.estimate("x"),
        est_y2=moments.estimate("y2"),
        est_next_c2=moments.estimate("next_c2"),
        probe_second_moment_max_dev=probe_dev,
        envelopes=moment_envelopes(c2, mean_z2, p),
        czgh_floor=p.gap * c2 * (1.0 - c2) / (d - 1),
        next_c2_floor=one_step_bound(c2, eta_to_eta_hat(eta, d, p.gap), p.S),
    )


def one_step_diagnostics(
    u: UnitVector,
    cov: SpectralCovariance,
    eta: float,
    n: int,
    rng: np.random.Generator,
    chunk: int = DIAGNOSTIC_CHUNK,
) -> Estimate:
    """Monte Carlo estimate of E[c_{t+1}^2] after one adaptive step from u."""
    c = u.dot(cov.leading_eigenvector())
    moments = _Moments()
    for g, h, z, _ in _readings(u, cov, n, rng, chunk):
        moments.n += len(g)
        moments.add(next_c2=_next_c2(c, z, g, h, eta))
    return moments.estimate("next_c2")


def aligned_estimate(cov: SpectralCovariance, c2: float) -> UnitVector:
    """Estimate at squared alignment c2 in the plane of w1 and w2."""
    if not 0.0 <= c2 <= 1.0:
        raise OjaError(f"Alignment c2 must lie in [0, 1], got {c2!r}.")
    return normalize(math.sqrt(c2) * cov.basis[:, 0] + math.sqrt(1.0 - c2) * cov.basis[:, 1])
