"""Multi-trial runs, aggregation, steady-state estimation and moment diagnostics."""

import math

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.core import harness
from app.core.errors import DegenerateInputError, OjaError, TrialError
from app.core.harness import (
    SWEEP_COLUMNS,
    ExperimentConfig,
    ScheduleSpec,
    aggregate,
    aligned_estimate,
    first_crossing,
    fraction_below_bound,
    moment_diagnostics,
    one_step_diagnostics,
    run_trials,
    steady_state,
    trial_seed,
    velocity_sweep,
)
from app.core.model import alignment, make_covariance, sample_data
from app.core.theory import compute_params, moment_envelopes, one_step_bound, tracking_plan
from app.core.tracker import Algorithm, ScheduleVariant, StepSchedule, run

NO_BOUND = {"bound": "none"}


def _flat_series(values, t=None):
    values = np.asarray(values, dtype=float)
    t = np.arange(len(values)) if t is None else np.asarray(t)
    return aggregate(t, values[None, :], np.zeros(len(values)), NO_BOUND)


class TestTrialSeed:
    def test_stable(self):
        assert trial_seed(0, 0) == trial_seed(0, 0)
        assert 0 <= trial_seed(7, 3) < 2**64

    def test_distinct_across_trials_and_bases(self):
        seeds = {trial_seed(base, i) for base in range(5) for i in range(200)}
        assert len(seeds) == 1000


class TestAggregate:
    def test_percentile_convention_for_twenty_trials(self):
        sin2 = (np.arange(20) / 100.0)[:, None]
        series = aggregate(np.array([0]), sin2, np.zeros(1), NO_BOUND)
        row = series.frame.iloc[0]
        # 0-based positions 3.8 and 15.2 between order statistics
        assert row["p20"] == pytest.approx(0.038, abs=1e-15)
        assert row["p80"] == pytest.approx(0.152, abs=1e-15)
        assert row["mean_sin2"] == pytest.approx(0.095, abs=1e-15)

    def test_permutation_invariant(self, rng):
        sin2 = rng.uniform(size=(20, 7))
        t = np.arange(7) * 10
        a = aggregate(t, sin2, np.zeros(7), NO_BOUND)
        b = aggregate(t, sin2[rng.permutation(20)], np.zeros(7), NO_BOUND)
        pd.testing.assert_frame_equal(a.frame, b.frame, check_exact=True)

    def test_single_trial_collapses(self, rng):
        sin2 = rng.uniform(size=(1, 5))
        frame = aggregate(np.arange(5), sin2, np.zeros(5), NO_BOUND).frame
        np.testing.assert_array_equal(frame["mean_sin2"], frame["p20"])
        np.testing.assert_array_equal(frame["p20"], frame["p80"])

    def test_digest_follows_config(self):
        a = _flat_series([0.5, 0.4])
        b = aggregate(np.arange(2), np.array([[0.5, 0.4]]), np.zeros(2), {"bound": "theorem"})
        assert a.digest != b.digest
        assert len(a.digest) == 64

    def test_rejects_values_outside_unit_interval(self):
        with pytest.raises(OjaError):
            _flat_series([0.5, 1.5])

    def test_rejects_unsorted_grid(self):
        with pytest.raises(OjaError, match="strictly increasing"):
            _flat_series([0.5, 0.4], t=[3, 1])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(OjaError):
            aggregate(np.arange(3), np.zeros((4, 2)), np.zeros(3), NO_BOUND)


class TestSeriesSummaries:
    def test_constant_steady_state(self):
        assert steady_state(_flat_series([0.25] * 10)) == pytest.approx(0.25)

    def test_full_window_is_grand_mean(self):
        values = [0.9, 0.5, 0.3, 0.1]
        assert steady_state(_flat_series(values), 1.0) == pytest.approx(np.mean(values))

    def test_window_rounds_up(self):
        # ceil(0.2 * 6) = 2 rows
        assert steady_state(_flat_series([0.9, 0.8, 0.7, 0.6, 0.2, 0.4])) == pytest.approx(0.3)

    @pytest.mark.parametrize("tail_frac", [0.0, -0.1, 1.5])
    def test_bad_window(self, tail_frac):
        with pytest.raises(OjaError):
            steady_state(_flat_series([0.1]), tail_frac)

    def test_first_crossing(self):
        series = _flat_series([0.9, 0.5, 0.09, 0.2, 0.05], t=[0, 10, 20, 30, 40])
        assert first_crossing(series, 0.1) == 20
        assert first_crossing(series, 0.01) is None

    def test_fraction_needs_a_bound(self):
        assert fraction_below_bound(_flat_series([0.3, 0.2])) is None


class TestExperimentConfig:
    def test_defaults_carry_the_bound(self):
        cfg = ExperimentConfig()
        assert cfg.carries_bound()
        assert cfg.describe()["bound"] == "theorem"
        assert cfg.resolved_stride() == 200

    @pytest.mark.parametrize(
        "changes",
        [
            {"algo": Algorithm.FULL},
            {"velocity": 1e-4},
            {"schedule": ScheduleSpec(name=ScheduleVariant.INVERSE_T)},
        ],
    )
    def test_other_runs_carry_no_bound(self, changes):
        cfg = ExperimentConfig(**changes)
        assert cfg.describe()["bound"] == "none"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"trials": 0},
            {"iters": 0},
            {"lambda1": 1.0, "lambda2": 1.0},
            {"velocity": 1.0},
            {"d": 1},
            {"tail": [2.0] * 8},
            {"unknown": 1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            ExperimentConfig(**kwargs)

    def test_constant_schedule_needs_step(self):
        with pytest.raises(ValidationError, match="needs eta_hat"):
            ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT)

    def test_oversized_constant_step_is_allowed(self):
        spec = ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=0.5)
        assert ExperimentConfig(schedule=spec).step_schedule().eta_hat == 0.5


class TestRunTrials:
    def test_bound_column(self):
        cfg = ExperimentConfig(iters=500, trials=3, stride=100)
        frame = run_trials(cfg).frame
        assert frame["t"].tolist() == [0, 100, 200, 300, 400, 500]
        assert frame["bound_sin2"].iloc[0] == pytest.approx(0.9, abs=1e-15)
        assert np.all(frame["bound_sin2"] >= 0.5)

    def test_no_bound_column_for_baseline(self):
        cfg = ExperimentConfig(
            iters=200, trials=2, algo=Algorithm.FULL, schedule=ScheduleSpec(name=ScheduleVariant.INVERSE_T)
        )
        series = run_trials(cfg)
        assert (series.frame["bound_sin2"] == 0.0).all()
        assert series.config["bound"] == "none"

    def test_deterministic_and_independent_of_workers(self):
        cfg = ExperimentConfig(iters=1000, trials=4, base_seed=3, orientation_seed=2)
        serial = run_trials(cfg, workers=1)
        again = run_trials(cfg, workers=1)
        pooled = run_trials(cfg, workers=2)
        pd.testing.assert_frame_equal(serial.frame, again.frame, check_exact=True)
        pd.testing.assert_frame_equal(serial.frame, pooled.frame, check_exact=True)
        assert serial.digest == pooled.digest

    def test_drifting_run(self):
        cfg = ExperimentConfig(
            iters=300,
            trials=2,
            schedule=ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=1e-3),
            velocity=1e-4,
        )
        series = run_trials(cfg)
        assert len(series) == 301
        assert series.config["velocity"] == 1e-4

    def test_failure_names_the_trial(self, monkeypatch):
        def boom(*args, **kwargs):
            raise FloatingPointError("overflow")

        monkeypatch.setattr(harness, "run", boom)
        with pytest.raises(TrialError, match="trial 0 failed") as info:
            run_trials(ExperimentConfig(iters=10, trials=2))
        assert info.value.trial_index == 0

    def test_failure_keeps_its_cause(self):
        spec = ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=1e200)
        with pytest.raises(TrialError) as info:
            run_trials(ExperimentConfig(iters=5, trials=1, schedule=spec))
        assert isinstance(info.value.__cause__, DegenerateInputError)

    @pytest.mark.slow
    def test_mean_stays_below_bound(self):
        cfg = ExperimentConfig(iters=200_000, trials=20, base_seed=1)
        series = run_trials(cfg, workers=2)
        assert fraction_below_bound(series, min_t=10) >= 0.95


class TestVelocitySweep:
    def test_rows_follow_the_plan(self, ref_params):
        cfg = ExperimentConfig(iters=300, trials=2, base_seed=1)
        frame = velocity_sweep(cfg, [1e-5, 1e-4])
        assert list(frame.columns) == SWEEP_COLUMNS
        assert frame["velocity"].tolist() == [1e-5, 1e-4]
        for row in frame.itertuples():
            plan = tracking_plan(ref_params, row.velocity)
            assert row.eta_hat == plan.eta_hat_star
            assert row.x_star == plan.x_star
            assert 0.0 <= row.steady_state <= 1.0

    def test_matches_a_single_tracking_run(self):
        cfg = ExperimentConfig(iters=400, trials=2, base_seed=3)
        row = velocity_sweep(cfg, [1e-4]).iloc[0]
        single = ExperimentConfig(
            iters=400,
            trials=2,
            base_seed=3,
            schedule=ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=row["eta_hat"]),
            velocity=1e-4,
        )
        assert row["steady_state"] == steady_state(run_trials(single))

    @pytest.mark.parametrize("velocities", [[], [0.0], [1e-4, 1.0]])
    def test_invalid_velocities(self, velocities):
        with pytest.raises(OjaError):
            velocity_sweep(ExperimentConfig(iters=10, trials=1), velocities)

    @pytest.mark.slow
    def test_steady_state_grows_with_velocity(self):
        cfg = ExperimentConfig(iters=60_000, trials=10, base_seed=7)
        frame = velocity_sweep(cfg, [2.5e-5, 1e-4, 4e-4], workers=2)
        assert frame["steady_state"].is_monotonic_increasing
        assert (frame["velocity"] <= frame["steady_state"]).all()
        assert (frame["steady_state"] <= frame["x_star"]).all()


class TestMomentDiagnostics:
    @pytest.mark.parametrize("c2", [0.1, 0.5, 0.9])
    def test_envelopes_hold(self, ref_cov, ref_params, c2):
        u = aligned_estimate(ref_cov, c2)
        eta = StepSchedule.theorem(ref_params).eta0
        report = moment_diagnostics(u, ref_cov, eta, 1_000_000, np.random.default_rng(int(c2 * 10)))
        assert report.n == 1_000_000
        assert report.c2 == pytest.approx(c2, abs=1e-12)
        assert report.envelopes.a2 == pytest.approx(c2 + 1.0)
        assert all(e.se > 0 for e in (report.est_g2, report.est_h2, report.est_gh, report.est_czgh))
        assert report.checks() == {name: True for name in report.checks()}

    def test_aligned_estimate(self):
        cov = make_covariance(10, 2.0, 1.0, orientation=4)
        for c2 in (0.0, 0.3, 1.0):
            cos2, _ = alignment(aligned_estimate(cov, c2), cov.leading_eigenvector())
            assert cos2 == pytest.approx(c2, abs=1e-12)

    def test_perfect_alignment(self, ref_cov, rng):
        u = aligned_estimate(ref_cov, 1.0)
        report = moment_diagnostics(u, ref_cov, 9.0 / 920.0, 200_000, rng)
        assert abs(report.est_g2.mean - 2.0) <= 4 * report.est_g2.se
        assert abs(report.est_czgh.mean) <= 1e-12

    @pytest.mark.parametrize("z2", [0.1, 0.5, 0.9])
    @pytest.mark.parametrize("tail", [None, list(np.linspace(0.8, 0.1, 8))])
    def test_conditional_probe_envelope(self, z2, tail):
        cov = make_covariance(10, 2.0, 1.0, tail=tail, orientation=6)
        probe = aligned_estimate(cov, z2)
        rng = np.random.default_rng(int(z2 * 100) + (0 if tail is None else 1))
        h2 = (sample_data(cov, rng, size=1_000_000) @ probe.coords) ** 2
        se = h2.std(ddof=1) / math.sqrt(len(h2))
        envelope = moment_envelopes(0.0, z2, compute_params(10, 2.0, 1.0)).b2
        assert h2.mean() <= envelope + 4 * se

    def test_needs_enough_samples(self, ref_cov, rng):
        with pytest.raises(OjaError, match="10000"):
            moment_diagnostics(aligned_estimate(ref_cov, 0.5), ref_cov, 0.01, 100, rng)

    def test_one_step_improvement(self, ref_cov, ref_params):
        u = aligned_estimate(ref_cov, 0.3)
        eta_hat = 1.0 / (2.0 * ref_params.S)
        est = one_step_diagnostics(u, ref_cov, 9.0 * eta_hat, 1_000_000, np.random.default_rng(6))
        assert est.mean >= one_step_bound(0.3, eta_hat, ref_params.S) - 4 * est.se
        assert est.mean >= 0.3002935 - 4 * est.se

    def test_warmup_is_monotone(self, ref_cov):
        eta = 9.0 / 920.0
        for i, c2 in enumerate(np.arange(0.05, 0.501, 0.05)):
            u = aligned_estimate(ref_cov, float(c2))
            est = one_step_diagnostics(u, ref_cov, eta, 200_000, np.random.default_rng(100 + i))
            assert est.mean >= c2 - 3 * est.se


@pytest.mark.slow
class TestReproductions:
    def test_warmup_guarantee(self):
        cfg = ExperimentConfig(iters=2963, trials=200, stride=2963, base_seed=5)
        cov, schedule = cfg.covariance(), cfg.step_schedule()
        finals = np.array(
            [
                run(
                    cov,
                    schedule,
                    algo=Algorithm.ADAPTIVE,
                    iters=cfg.iters,
                    rng=np.random.default_rng(trial_seed(cfg.base_seed, i)),
                    stride=cfg.stride,
                ).sin2[-1]
                for i in range(cfg.trials)
            ]
        )
        se = finals.std(ddof=1) / math.sqrt(len(finals))
        assert finals.mean() <= 0.5 + 3 * se

    def test_adaptive_costs_about_ten_times_full_sampling(self):
        adaptive = run_trials(ExperimentConfig(iters=20_000, trials=20, stride=10, base_seed=2), workers=2)
        full = run_trials(
            ExperimentConfig(
                iters=2_000,
                trials=20,
                stride=1,
                base_seed=2,
                algo=Algorithm.FULL,
                schedule=ScheduleSpec(name=ScheduleVariant.INVERSE_T),
            ),
            workers=2,
        )
        t_adaptive = first_crossing(adaptive, 0.1)
        t_full = first_crossing(full, 0.1)
        assert t_adaptive is not None and t_full is not None
        assert 4.0 <= t_adaptive / t_full <= 25.0

    def test_constant_step_fixed_point(self, ref_params):
        eta_hat = 1.0 / (2.0 * ref_params.S)
        cfg = ExperimentConfig(
            iters=30_000,
            trials=10,
            base_seed=4,
            schedule=ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=eta_hat),
        )
        ss = steady_state(run_trials(cfg, workers=2))
        # the predicted 0.25 is an upper estimate of the stationary error
        assert 0.0 < ss <= 0.25

    def test_tracking_fixed_point(self, ref_params):
        V = 1e-4
        plan = tracking_plan(ref_params, V)
        cfg = ExperimentConfig(
            iters=60_000,
            trials=10,
            base_seed=7,
            schedule=ScheduleSpec(name=ScheduleVariant.CONSTANT_HAT, eta_hat=plan.eta_hat_star),
            velocity=V,
        )
        ss = steady_state(run_trials(cfg, workers=2))
        assert V <= ss <= 0.214576

    def test_error_shrinks_on_doubling_ladder(self):
        ladder = [
            steady_state(run_trials(ExperimentConfig(iters=iters, trials=10, base_seed=9), workers=2))
            for iters in (10_000, 20_000, 40_000)
        ]
        assert ladder[0] > ladder[1] > ladder[2]
