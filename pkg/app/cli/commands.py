# app/cli/commands.py
from __future__ import annotations

import functools
import json
import logging
import sys
import time
from collections.abc import Callable
from typing import Any

import click
import numpy as np

from app.cli.schemas import BoundRequest, DiagnoseRequest, TrackRequest
from app.config import get_settings
from app.core.errors import TrialError
from app.core.harness import (
    AggregateSeries,
    ExperimentConfig,
    ScheduleSpec,
    aligned_estimate,
    fraction_below_bound,
    moment_diagnostics,
    run_trials,
    steady_state,
    velocity_sweep,
)
from app.core.model import make_covariance
from app.core.theory import bound_params, tracking_fixed_point, tracking_plan
from app.core.tracker import Algorithm, ScheduleVariant, StepSchedule, eta_hat_to_eta
from app.storage.export import export_series, export_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _fail(e: BaseException, code: int) -> None:
    click.echo(f"error: {e}", err=True)
    sys.exit(code)


def handle_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    """
    Map config errors to exit 2 and I/O errors to exit 3. A failed trial is
    mapped by its cause; numerical blow-ups count as configuration errors.
    """

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except TrialError as e:
            if isinstance(e.__cause__, OSError):
                _fail(e, EXIT_IO)
            if isinstance(e.__cause__, (ValueError, ArithmeticError)):
                _fail(e, EXIT_CONFIG)
            raise
        except OSError as e:
            _fail(e, EXIT_IO)
        except ValueError as e:
            _fail(e, EXIT_CONFIG)

    return wrapper


def problem_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    fn = click.option(
        "--lambda2", type=float, default=1.0, show_default=True,
        help="Second eigenvalue, also used for the flat tail (variance units).",
    )(fn)
    fn = click.option(
        "--lambda1", type=float, default=2.0, show_default=True,
        help="Leading eigenvalue (variance units).",
    )(fn)
    fn = click.option(
        "--d", "d", type=int, default=10, show_default=True,
        help="Ambient dimension (>= 2).",
    )(fn)
    return fn


def run_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    fn = click.option(
        "--progress/--no-progress", default=False, show_default=True,
        help="Show a trial progress bar on stderr.",
    )(fn)
    fn = click.option(
        "--workers", type=int, default=None,
        help="Worker processes for trials [default: COMPRESSIVE_OJA_WORKERS or 1].",
    )(fn)
    fn = click.option(
        "--format", "fmt", type=click.Choice(["csv", "json"]), default=None,
        help="Output format [default: from the --out suffix].",
    )(fn)
    fn = click.option(
        "--orientation-seed", type=int, default=None,
        help="Seed of a random eigenbasis [default: identity basis].",
    )(fn)
    fn = click.option(
        "--stride", type=int, default=None,
        help="Iterations between checkpoints [default: iters/1000, min 1].",
    )(fn)
    fn = click.option(
        "--seed", type=int, default=0, show_default=True,
        help="Base seed; per-trial seeds are derived from it.",
    )(fn)
    fn = click.option(
        "--trials", type=int, default=20, show_default=True,
        help="Independent trajectories to aggregate.",
    )(fn)
    return fn


def _write_and_summarize(
    series: AggregateSeries, out: str, fmt: str | None, started: float, extra: dict[str, Any]
) -> None:
    path = export_series(series, get_settings().resolve_output(out), fmt)
    summary = {
        "final_mean_sin2": float(series.frame["mean_sin2"].iloc[-1]),
        **extra,
        "out": str(path),
        "digest": series.digest,
    }
    click.echo(json.dumps(summary))
    click.echo(f"wall time: {time.perf_counter() - started:.2f}s", err=True)


@click.group()
@handle_errors
def cli() -> None:
    """Compressive Oja's algorithm with adaptive sensing: bounds and experiments."""
    logging.basicConfig(
        level=get_settings().log_level,
        stream=sys.stderr,
        format="[%(name)s] %(levelname)s %(message)s",
    )


@cli.command()
@problem_options
@click.option(
    "--velocity", type=float, default=None,
    help="Per-step drift V of the leading eigenvector (squared-sine units, 0 <= V < 1).",
)
@handle_errors
def bound(d: int, lambda1: float, lambda2: float, velocity: float | None) -> None:
    """Print the convergence-theorem constants (and the tracking plan) as JSON."""
    req = BoundRequest(d=d, lambda1=lambda1, lambda2=lambda2, velocity=velocity)
    p = req.params()
    b = bound_params(p)

    out: dict[str, Any] = {
        "d": p.d,
        "lambda1": p.lambda1,
        "lambda2": p.lambda2,
        "gap": p.gap,
        "S": p.S,
        "t0": b.t0,
        "eta0": StepSchedule.theorem(p).eta0,
        "C1": b.C1,
        "C2": b.C2,
        "epsilon": b.epsilon,
    }
    if req.velocity is not None:
        plan = tracking_plan(p, req.velocity)
        out.update(
            velocity=plan.velocity,
            eta_hat_star=plan.eta_hat_star,
            eta_star=eta_hat_to_eta(plan.eta_hat_star, p.d, p.gap),
            s_tilde=plan.s_tilde,
            x_star=plan.x_star,
        )
    click.echo(json.dumps(out, indent=2))


@cli.command()
@problem_options
@click.option("--iters", type=int, default=200_000, show_default=True, help="Iterations per trial.")
@run_options
@click.option(
    "--algo", type=click.Choice([a.value for a in Algorithm]), default="adaptive", show_default=True,
    help="Adaptive compressive sensing or the fully-sampled baseline.",
)
@click.option(
    "--schedule", type=click.Choice([v.value for v in ScheduleVariant]), default="theorem",
    show_default=True, help="Step-size schedule.",
)
@click.option(
    "--eta-hat", type=float, default=None,
    help="Normalized step gap*eta/(d-1) for the constant schedule.",
)
@click.option(
    "--scale", type=float, default=1.0, show_default=True,
    help="Numerator of the inverse-t schedule (eta_t = scale/t).",
)
@click.option("--out", type=str, default="converge.csv", show_default=True, help="Output file path.")
@handle_errors
def converge(
    d: int,
    lambda1: float,
    lambda2: float,
    iters: int,
    trials: int,
    seed: int,
    stride: int | None,
    orientation_seed: int | None,
    fmt: str | None,
    workers: int | None,
    progress: bool,
    algo: str,
    schedule: str,
    eta_hat: float | None,
    scale: float,
    out: str,
) -> None:
    """Run stationary convergence trials and write the aggregated series.

    Prints one JSON summary line on stdout. The wall time goes to stderr, so
    reruns with the same flags print identical stdout.
    """
    started = time.perf_counter()
    cfg = ExperimentConfig(
        d=d,
        lambda1=lambda1,
        lambda2=lambda2,
        orientation_seed=orientation_seed,
        algo=Algorithm(algo),
        schedule=ScheduleSpec(name=ScheduleVariant(schedule), eta_hat=eta_hat, scale=scale),
        iters=iters,
        trials=trials,
        base_seed=seed,
        stride=stride,
    )
    series = run_trials(cfg, workers=workers or get_settings().workers, progress=progress)
    _write_and_summarize(
        series, out, fmt, started,
        {"fraction_below_bound": fraction_below_bound(series)},
    )


@cli.command()
@problem_options
@click.option(
    "--velocity", type=float, required=True,
    help="Per-step drift V of the leading eigenvector (squared-sine units, 0 < V < 1).",
)
@click.option("--iters", type=int, default=100_000, show_default=True, help="Iterations per trial.")
@run_options
@click.option(
    "--eta-hat", type=float, default=None,
    help="Normalized constant step [default: the drift-optimal sqrt(V/S)].",
)
@click.option(
    "--tail-frac", type=float, default=0.2, show_default=True,
    help="Fraction of final checkpoints averaged for the steady state.",
)
@click.option("--out", type=str, default="track.csv", show_default=True, help="Output file path.")
@handle_errors
def track(
    d: int,
    lambda1: float,
    lambda2: float,
    velocity: float,
    iters: int,
    trials: int,
    seed: int,
    stride: int | None,
    orientation_seed: int | None,
    fmt: str | None,
    workers: int | None,
    progress: bool,
    eta_hat: float | None,
    tail_frac: float,
    out: str,
) -> None:
    """Track a drifting leading eigenvector with a constant step.

    Prints one JSON summary line on stdout. The wall time goes to stderr, so
    reruns with the same flags print identical stdout.
    """
    started = time.perf_counter()
    req = TrackRequest(d=d, lambda1=lambda1, lambda2=lambda2, velocity=velocity, eta_hat=eta_hat)
    p = req.params()
    plan = tracking_plan(p, req.velocity)
    step = req.eta_hat if req.eta_hat is not None else plan.eta_hat_star

    cfg = ExperimentConfig(
        d=d,
        lambda1=lambda1,
        lambda2=lambda2,
        orientation_seed=orientation_seed,
        algo=Algorithm.ADAPTIVE,
        schedule=ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=step),
        iters=iters,
        trials=trials,
        base_seed=seed,
        stride=stride,
        velocity=req.velocity,
    )
    series = run_trials(cfg, workers=workers or get_settings().workers, progress=progress)
    _write_and_summarize(
        series, out, fmt, started,
        {
            "steady_state": steady_state(series, tail_frac),
            "x_star": plan.x_star,
            "eta_hat": step,
            "predicted_for_step": tracking_fixed_point(p.S, req.velocity, step),
        },
    )


@cli.command()
@problem_options
@click.option(
    "--velocity", "velocities", type=float, multiple=True, required=True,
    help="Per-step drift V (squared-sine units, 0 < V < 1); repeat the flag for each V.",
)
@click.option("--iters", type=int, default=100_000, show_default=True, help="Iterations per trial.")
@run_options
@click.option(
    "--tail-frac", type=float, default=0.2, show_default=True,
    help="Fraction of final checkpoints averaged for the steady state.",
)
@click.option(
    "--out", type=str, default="sweep.csv", show_default=True,
    help="Output table with columns velocity, eta_hat, x_star, steady_state.",
)
@handle_errors
def sweep(
    d: int,
    lambda1: float,
    lambda2: float,
    velocities: tuple[float, ...],
    iters: int,
    trials: int,
    seed: int,
    stride: int | None,
    orientation_seed: int | None,
    fmt: str | None,
    workers: int | None,
    progress: bool,
    tail_frac: float,
    out: str,
) -> None:
    """Track several drift velocities at their optimal steps and compare the
    steady state with the predicted x* for each.

    Prints one JSON summary line on stdout. The wall time goes to stderr, so
    reruns with the same flags print identical stdout.
    """
    started = time.perf_counter()
    for velocity in velocities:
        TrackRequest(d=d, lambda1=lambda1, lambda2=lambda2, velocity=velocity)

    cfg = ExperimentConfig(
        d=d,
        lambda1=lambda1,
        lambda2=lambda2,
        orientation_seed=orientation_seed,
        iters=iters,
        trials=trials,
        base_seed=seed,
        stride=stride,
    )
    table = velocity_sweep(
        cfg, velocities, tail_frac, workers=workers or get_settings().workers, progress=progress
    )
    shared = cfg.model_dump(mode="json", exclude={"algo", "schedule", "velocity"})
    path = export_sweep(table, shared, get_settings().resolve_output(out), fmt)
    click.echo(json.dumps({"rows": table.to_dict(orient="records"), "out": str(path)}))
    click.echo(f"wall time: {time.perf_counter() - started:.2f}s", err=True)


@cli.command()
@problem_options
@click.option("--c2", type=float, default=0.5, show_default=True, help="Squared alignment of u with the leading eigenvector.")
@click.option("--eta", type=float, default=None, help="Raw step size [default: theorem warmup step].")
@click.option("--samples", type=int, default=1_000_000, show_default=True, help="Monte Carlo draws (>= 10000).")
@click.option("--seed", type=int, default=0, show_default=True, help="Random seed.")
@handle_errors
def diagnose(
    d: int,
    lambda1: float,
    lambda2: float,
    c2: float,
    eta: float | None,
    samples: int,
    seed: int,
) -> None:
    """Monte Carlo check of the measurement moment envelopes at a fixed estimate."""
    req = DiagnoseRequest(
        d=d, lambda1=lambda1, lambda2=lambda2, c2=c2, eta=eta, samples=samples, seed=seed
    )
    p = req.params()
    step = req.eta if req.eta is not None else StepSchedule.theorem(p).eta0
    cov = make_covariance(d, lambda1, lambda2)
    u = aligned_estimate(cov, req.c2)
    report = moment_diagnostics(u, cov, step, req.samples, np.random.default_rng(req.seed))

    def est(e: Any) -> dict[str, float]:
        return {"mean": e.mean, "se": e.se}

    out = {
        "n": report.n,
        "c2": report.c2,
        "eta": step,
        "estimates": {
            "g2": est(report.est_g2),
            "h2": est(report.est_h2),
            "gh": est(report.est_gh),
            "czgh": est(report.est_czgh),
            "x": est(report.est_x),
            "y2": est(report.est_y2),
            "next_c2": est(report.est_next_c2),
        },
        "envelopes": {"a2": report.envelopes.a2, "b2": report.envelopes.b2},
        "czgh_floor": report.czgh_floor,
        "next_c2_floor": report.next_c2_floor,
        "probe_second_moment_max_dev": report.probe_second_moment_max_dev,
        "checks": report.checks(),
    }
    click.echo(json.dumps(out, indent=2))
