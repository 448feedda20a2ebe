import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqueue.core import (
    CONFIG_KEYS,
    ClampLog,
    ConfigError,
    CvObservation,
    CycleOutcome,
    ErrorSummary,
    EstimateResult,
    LAMBDA_GRID,
    P_GRID_FULL,
    SignalDemandConfig,
    format_config_text,
    parse_config_text,
)


class TestSignalDemandConfig:
    def test_derived_quantities(self):
        cfg = SignalDemandConfig(lam=0.2, p=0.5)
        assert cfg.cycle == pytest.approx(88.2)
        assert cfg.capacity_per_cycle == pytest.approx(24.0)
        assert cfg.discharge_per_cycle == 24
        assert cfg.rho == pytest.approx(0.2 * 88.2 / 24.0)
        assert cfg.rho_o == pytest.approx(0.71)
        assert cfg.theta == pytest.approx(0.1)

    def test_rho_grid_matches_demand_grid(self):
        # The seven demand levels correspond to these volume-to-capacity
        # ratios within rounding of the published grid.
        expected = (0.41, 0.49, 0.60, 0.70, 0.80, 0.88, 0.98)
        for lam, rho in zip(LAMBDA_GRID, expected):
            cfg = SignalDemandConfig(lam=lam, p=0.5)
            assert abs(cfg.rho - rho) < 0.015, (lam, cfg.rho)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lam": 0.0, "p": 0.5},
            {"lam": -1.0, "p": 0.5},
            {"lam": 0.2, "p": -0.1},
            {"lam": 0.2, "p": 1.5},
            {"lam": 0.2, "p": 0.5, "red": 0.0},
            {"lam": 0.2, "p": 0.5, "green": -3.0},
            {"lam": 0.2, "p": 0.5, "discharge_headway": 0.0},
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ConfigError):
            SignalDemandConfig(**kwargs)

    def test_p_one_is_allowed(self):
        assert SignalDemandConfig(lam=0.2, p=1.0).theta == 0.0

    def test_p_zero_is_allowed(self):
        # zero market penetration is a legal configuration (no CVs at all);
        # only the closed-form layer refuses it
        assert SignalDemandConfig(lam=0.2, p=0.0).theta == 0.2

    def test_with_lambda(self):
        cfg = SignalDemandConfig(lam=0.2, p=0.5).with_lambda(0.1)
        assert cfg.lam == 0.1 and cfg.p == 0.5


class TestConfigText:
    def test_key_set(self):
        assert len(CONFIG_KEYS) == 11
        assert CONFIG_KEYS[0] == "lambda"

    def test_round_trip(self):
        text = (
            "lambda = 0.218\np = 0.2\nred = 45\ngreen = 43.2\n"
            "discharge_headway = 1.8\nseed = 42\ncycles = 500\n"
            "replications = 2\noverflow_model = onset\n"
            "estimator = unknown_ratio\nsensor = off\n"
        )
        run = parse_config_text(text)
        assert run.signal.lam == 0.218
        assert run.overflow_model == "onset"
        assert parse_config_text(format_config_text(run)) == run

    def test_defaults_fill_in(self):
        run = parse_config_text("lambda = 0.2\np = 0.3\n")
        assert run.cycles == 1000 and run.sensor == "both"

    def test_comments_and_blank_lines(self):
        run = parse_config_text("# a comment\n\nlambda = 0.2\np = 0.3\n")
        assert run.signal.p == 0.3

    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("lambda = 0.2\np = 0.3\nwidth = 4\n", "unknown key"),
            ("lambda = 0.2\np = 0.3\nlambda = 0.3\n", "duplicate"),
            ("p = 0.3\n", "lambda"),
            ("lambda = abc\np = 0.3\n", "bad value"),
            ("lambda 0.2\n", "key = value"),
            ("lambda = 0.2\np = 0.3\nestimator = nope\n", "estimator"),
            ("lambda = 0.2\np = 0.3\nsensor = maybe\n", "sensor"),
        ],
    )
    def test_rejects(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config_text(text)

    @given(
        lam=st.floats(0.01, 0.3),
        p=st.floats(0.001, 1.0),
        seed=st.integers(0, 2**31),
        cycles=st.integers(1, 10_000),
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, lam, p, seed, cycles):
        text = f"lambda = {lam!r}\np = {p!r}\nseed = {seed}\ncycles = {cycles}\n"
        with warnings.catch_warnings():
            # high draws of lambda legitimately warn about rho >= 1
            warnings.simplefilter("ignore", UserWarning)
            run = parse_config_text(text)
            again = parse_config_text(format_config_text(run))
        assert again.signal.lam == pytest.approx(run.signal.lam, rel=1e-11)
        assert again.signal.p == pytest.approx(run.signal.p, rel=1e-11)
        assert (again.seed, again.cycles) == (run.seed, run.cycles)


class TestCycleOutcome:
    def test_rejects_mismatched_arrays(self):
        with pytest.raises(ValueError):
            CycleOutcome(
                cycle_index=1,
                overflow_in=1,
                red_arrivals=1,
                stop_times=np.array([1.0]),
                cv_flags=np.array([True]),
                overflow_mask=np.array([True]),
            )

    def test_rejects_decreasing_new_arrivals(self):
        with pytest.raises(ValueError):
            CycleOutcome(
                cycle_index=1,
                overflow_in=0,
                red_arrivals=2,
                stop_times=np.array([5.0, 3.0]),
                cv_flags=np.array([True, False]),
                overflow_mask=np.array([False, False]),
            )

    def test_total_queue(self):
        out = CycleOutcome(
            cycle_index=3,
            overflow_in=2,
            red_arrivals=1,
            stop_times=np.array([10.0, 20.0, 5.0]),
            cv_flags=np.array([False, True, False]),
            overflow_mask=np.array([True, True, False]),
        )
        assert out.total_queue == 3


class TestCvObservation:
    def test_no_cv_shape(self):
        obs = CvObservation(m=0, l=0)
        assert obs.join_time is None and obs.follower_join_time is None

    def test_rejects_no_cv_with_position(self):
        with pytest.raises(ValueError):
            CvObservation(m=0, l=2)

    def test_rejects_last_with_follower(self):
        with pytest.raises(ValueError):
            CvObservation(m=1, l=3, t=10.0, last_is_last=True, l_prime=4, t_prime=12.0)

    def test_rejects_follower_before_last(self):
        with pytest.raises(ValueError):
            CvObservation(m=1, l=3, t=10.0, last_is_last=False, l_prime=4, t_prime=8.0)

    def test_overflow_clocks(self):
        obs = CvObservation(
            m=2, l=1, last_is_last=False, l_prime=2, tau=70.0, tau_prime=75.0,
            last_in_overflow=True,
        )
        assert obs.join_time == 70.0
        assert obs.follower_join_time == 75.0


def test_estimate_result_validation():
    with pytest.raises(ValueError):
        EstimateResult(
            estimate=1.0, scenario="Bogus", delta=0.0, cond_variance=0.0,
            theta=0.0, p_used=0.5, lambda_used=0.2,
        )
    with pytest.raises(ValueError):
        EstimateResult(
            estimate=1.0, scenario="NoCv", delta=-1.0, cond_variance=0.0,
            theta=0.0, p_used=0.5, lambda_used=0.2,
        )


def test_error_summary_from_errors():
    true_n = np.array([10.0, 12.0, 8.0, 10.0])
    est = np.array([9.0, 12.0, 9.0, 10.0])
    summary = ErrorSummary.from_errors(true_n, est, n_replications=2)
    assert summary.mean_true == 10.0
    assert summary.bias == pytest.approx(0.0)
    assert summary.v_d == pytest.approx(np.var([1.0, 0.0, -1.0, 0.0]))
    assert summary.vmr == pytest.approx(summary.v_d / 10.0)
    assert summary.n_replications == 2


def test_clamp_log_counts():
    log = ClampLog()
    assert log.total() == 0
    log.rho_capped += 2
    log.lambda_hat_clamped += 1
    assert log.total() == 3
    d = log.as_dict()
    assert d["rho_capped"] == 2 and sum(d.values()) == 3


def test_grids_are_full_size():
    assert len(LAMBDA_GRID) == 7
    assert len(P_GRID_FULL) == 11
    assert P_GRID_FULL[0] == 0.001 and P_GRID_FULL[-1] == 0.9
