import io
import math

import numpy as np
import pytest

from cvqueue.analytic import cdf_t, expected_t, prob_no_cv
from cvqueue.core import (
    SCENARIO_IS_LAST_ARRIVALS,
    SCENARIO_IS_LAST_OVERFLOW,
    SCENARIO_NO_CV,
    SCENARIO_NOT_LAST_ARRIVALS,
    SCENARIO_NOT_LAST_OVERFLOW,
    CycleOutcome,
    SignalDemandConfig,
)
from cvqueue.sim import (
    CYCLE_CSV_COLUMNS,
    CarriedQueue,
    SimRun,
    advance_overflow,
    cycle_csv_text,
    cycle_record,
    observe,
    run_replication,
    scenario_of_observation,
    simulate_cycle,
    simulate_red_phases,
    substream_rng,
    write_cycle_records,
)


class TestSubstreams:
    def test_same_path_same_stream(self):
        a = substream_rng(7, 0, 3).random(5)
        b = substream_rng(7, 0, 3).random(5)
        assert np.array_equal(a, b)

    def test_disjoint_paths_differ(self):
        a = substream_rng(7, 0, 1).random(5)
        b = substream_rng(7, 0, 2).random(5)
        c = substream_rng(8, 0, 1).random(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_path_is_not_flattened_into_seed(self):
        # (seed=1, path=(2,)) and (seed=2, path=(1,)) must be distinct streams.
        a = substream_rng(1, 2).random(4)
        b = substream_rng(2, 1).random(4)
        assert not np.array_equal(a, b)


class TestSimulateCycle:
    def test_basic_shape(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.239, p=0.5)
        out = simulate_cycle(cfg, rng_factory(0), cycle_index=4)
        assert out.cycle_index == 4
        assert out.overflow_in == 0
        assert out.total_queue == out.red_arrivals
        assert np.all(np.diff(out.stop_times) >= 0)
        assert np.all((out.stop_times >= 0) & (out.stop_times < cfg.red))

    def test_carry_block_leads_queue(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.2, p=0.5)
        carry = CarriedQueue(np.array([60.0, 70.0]), np.array([True, False]))
        out = simulate_cycle(cfg, rng_factory(1), carry, cycle_index=2)
        assert out.overflow_in == 2
        assert out.overflow_mask[:2].all() and not out.overflow_mask[2:].any()
        assert out.stop_times[0] == 60.0 and out.cv_flags[0]

    def test_arrival_moments(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.218, p=0.3)
        rng = rng_factory(2)
        counts = [simulate_cycle(cfg, rng).red_arrivals for _ in range(4000)]
        counts = np.asarray(counts, dtype=float)
        mean = cfg.lam * cfg.red
        # Poisson: mean == variance; both within 5 SE of the sample size.
        assert counts.mean() == pytest.approx(mean, abs=5 * math.sqrt(mean / 4000))
        assert counts.var() == pytest.approx(mean, rel=0.1)


class TestAdvanceOverflow:
    def test_no_overflow_when_under_capacity(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.05, p=0.5)  # ~2.25 arrivals per red
        out = simulate_cycle(cfg, rng_factory(3))
        carry = advance_overflow(cfg, out, rng_factory(4))
        # 24 discharge slots dwarf ~4.4 expected arrivals per cycle
        assert len(carry) == 0

    def test_conservation(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.267, p=0.5)
        rng = rng_factory(5)
        carry = CarriedQueue.empty()
        for i in range(1, 60):
            out = simulate_cycle(cfg, rng, carry, cycle_index=i)
            before = out.total_queue
            carry = advance_overflow(cfg, out, rng)
            # next overflow = max(0, N + green arrivals - discharged), so it
            # can never exceed N + green arrivals and never go negative.
            assert 0 <= len(carry)
            assert len(carry) >= before - cfg.discharge_per_cycle

    def test_carried_vehicles_keep_join_times(self):
        cfg = SignalDemandConfig(lam=0.2, p=0.5)
        out = CycleOutcome(
            cycle_index=1,
            overflow_in=0,
            red_arrivals=30,
            stop_times=np.linspace(0.0, 44.0, 30),
            cv_flags=np.zeros(30, dtype=bool),
            overflow_mask=np.zeros(30, dtype=bool),
        )
        rng = np.random.default_rng(0)

        class _NoGreen:
            def poisson(self, lam):
                return 0

            def random(self, n):
                return rng.random(n)

        carry = advance_overflow(cfg, out, _NoGreen())
        assert len(carry) == 6  # 30 - 24 discharged
        assert np.array_equal(carry.stop_times, out.stop_times[-6:])


class TestObserve:
    def _outcome(self, times, flags, overflow=None):
        times = np.asarray(times, dtype=float)
        flags = np.asarray(flags, dtype=bool)
        mask = (
            np.zeros(times.size, dtype=bool)
            if overflow is None
            else np.asarray(overflow, dtype=bool)
        )
        q = int(mask.sum())
        return CycleOutcome(
            cycle_index=1,
            overflow_in=q,
            red_arrivals=int(times.size - q),
            stop_times=times,
            cv_flags=flags,
            overflow_mask=mask,
        )

    def test_no_cv(self):
        obs = observe(self._outcome([5.0, 9.0], [False, False]), sensor=True)
        assert obs.m == 0 and obs.l == 0
        assert scenario_of_observation(obs) == SCENARIO_NO_CV

    def test_zero_penetration_always_no_cv(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.2, p=0.0)
        rng = rng_factory(12)
        for _ in range(50):
            obs = observe(simulate_cycle(cfg, rng), sensor=True)
            assert scenario_of_observation(obs) == SCENARIO_NO_CV

    def test_last_cv_is_last_vehicle(self):
        obs = observe(self._outcome([5.0, 9.0], [False, True]), sensor=True)
        assert (obs.m, obs.l, obs.t) == (1, 2, 9.0)
        assert obs.last_is_last is True
        assert obs.t_prime is None
        assert scenario_of_observation(obs) == SCENARIO_IS_LAST_ARRIVALS

    def test_follower_detected_with_sensor(self):
        out = self._outcome([3.0, 8.0, 20.0], [True, True, False])
        obs = observe(out, sensor=True)
        assert (obs.m, obs.l, obs.t) == (2, 2, 8.0)
        assert obs.last_is_last is False
        assert obs.l_prime == 3 and obs.t_prime == 20.0
        assert scenario_of_observation(obs) == SCENARIO_NOT_LAST_ARRIVALS

    def test_no_sensor_hides_follower(self):
        out = self._outcome([3.0, 8.0, 20.0], [True, True, False])
        obs = observe(out, sensor=False)
        assert obs.l_prime == obs.l and obs.t_prime is None

    def test_overflow_member_reports_tau(self):
        out = self._outcome(
            [70.0, 12.0, 30.0], [True, False, False], overflow=[True, False, False]
        )
        obs = observe(out, sensor=True)
        assert obs.last_in_overflow and obs.tau == 70.0 and obs.t is None
        assert obs.join_time == 70.0
        # follower is a fresh arrival -> t'
        assert obs.t_prime == 12.0 and obs.tau_prime is None
        assert scenario_of_observation(obs) == SCENARIO_NOT_LAST_OVERFLOW

    def test_overflow_follower_also_carried(self):
        out = self._outcome(
            [70.0, 75.0, 30.0], [True, False, False], overflow=[True, True, False]
        )
        obs = observe(out, sensor=True)
        assert obs.tau_prime == 75.0 and obs.t_prime is None
        assert obs.follower_join_time == 75.0

    def test_whole_queue_last_flag(self):
        # the last CV is last among ALL vehicles, not just new arrivals
        out = self._outcome(
            [70.0, 12.0], [False, True], overflow=[True, False]
        )
        obs = observe(out, sensor=True)
        assert obs.last_is_last is True
        assert scenario_of_observation(obs) == SCENARIO_IS_LAST_ARRIVALS

    def test_last_carried_cv_closing_queue(self):
        out = self._outcome([70.0], [True], overflow=[True])
        obs = observe(out, sensor=True)
        assert scenario_of_observation(obs) == SCENARIO_IS_LAST_OVERFLOW


class TestVectorizedBatch:
    def test_matches_scalar_observation(self, rng_factory):
        """The flat-array fast path must agree with per-cycle observation."""
        cfg = SignalDemandConfig(lam=0.218, p=0.3)
        batch = simulate_red_phases(cfg, 500, rng_factory(6))
        # rebuild each cycle from the batch's own draws is not possible
        # (stream layouts differ), so check the internal consistency the
        # scalar path guarantees instead.
        cv = batch.has_cv
        assert np.array_equal(cv, batch.l > 0)
        assert np.all(batch.l[cv] >= batch.m[cv])
        assert np.all(batch.l <= batch.arrivals)
        assert np.array_equal(batch.is_last & cv, (batch.l == batch.arrivals) & cv)
        follow = batch.has_follower
        assert np.all(np.isnan(batch.t_follow[~follow]))
        assert np.all(batch.t_follow[follow] >= batch.t[follow])
        assert np.all(np.isnan(batch.t[~cv]))

    def test_no_cv_probability(self, batch_mid, cfg_mid):
        share = float((~batch_mid.has_cv).mean())
        p0 = prob_no_cv(cfg_mid)
        se = math.sqrt(p0 * (1 - p0) / batch_mid.n)
        assert abs(share - p0) < 4 * se

    def test_zero_filled_mean_t(self, batch_mid, cfg_mid):
        t0 = np.where(batch_mid.has_cv, np.nan_to_num(batch_mid.t), 0.0)
        se = float(t0.std(ddof=1) / math.sqrt(batch_mid.n))
        assert abs(t0.mean() - expected_t(cfg_mid)) < 4 * se

    def test_join_time_distribution_ks(self, batch_mid, cfg_mid):
        # one-sample KS against the closed-form conditional CDF, 1% level
        t = np.sort(batch_mid.t[batch_mid.has_cv])
        n = t.size
        grid = cdf_t(cfg_mid, t)
        empirical_hi = np.arange(1, n + 1) / n
        empirical_lo = np.arange(0, n) / n
        d = max(np.abs(empirical_hi - grid).max(), np.abs(grid - empirical_lo).max())
        assert d < 1.63 / math.sqrt(n)

    def test_deterministic(self, cfg_mid):
        a = simulate_red_phases(cfg_mid, 1000, substream_rng(9, 0, 0))
        b = simulate_red_phases(cfg_mid, 1000, substream_rng(9, 0, 0))
        assert np.array_equal(a.arrivals, b.arrivals)
        assert np.array_equal(a.t, b.t, equal_nan=True)
        assert np.array_equal(a.t_follow, b.t_follow, equal_nan=True)


class TestRunAndCsv:
    def test_sim_run_validation(self, cfg_mid):
        with pytest.raises(ValueError):
            SimRun(config=cfg_mid, seed=1, n_cycles=0)
        with pytest.raises(ValueError):
            SimRun(config=cfg_mid, seed=1, n_cycles=10, warmup_cycles=10)
        with pytest.raises(ValueError):
            SimRun(config=cfg_mid, seed=1, n_replications=0)

    def test_replication_is_seed_deterministic(self, cfg_mid):
        run = SimRun(config=cfg_mid, seed=11, n_cycles=20, warmup_cycles=0)
        a = run_replication(run, 1)
        b = run_replication(run, 1)
        assert all(
            x[0].red_arrivals == y[0].red_arrivals for x, y in zip(a, b)
        )

    def test_csv_schema_and_formatting(self):
        cfg = SignalDemandConfig(lam=0.267, p=0.4)
        run = SimRun(config=cfg, seed=5, n_cycles=40, n_replications=2, warmup_cycles=0)
        text = cycle_csv_text(run)
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(CYCLE_CSV_COLUMNS)
        assert lines[0] == "rep,cycle,Q_in,A,N,m,l,t,last_is_last,l_prime,t_prime,scenario"
        assert len(lines) == 1 + 2 * 40
        body = lines[1:]
        # booleans serialize as bare lowercase words, missing values as empty
        assert any(",true," in row or ",false," in row for row in body)
        no_cv_rows = [row for row in body if row.endswith(SCENARIO_NO_CV)]
        for row in no_cv_rows:
            fields = row.split(",")
            assert fields[7] == "" and fields[8] == ""  # t and last_is_last empty
        # byte-identical on rerun
        assert text == cycle_csv_text(run)

    def test_write_cycle_records_float_format(self):
        rec = (1, 2, 0, 3, 3, 1, 2, 12.345678901234, True, 3, None, SCENARIO_IS_LAST_ARRIVALS)
        buf = io.StringIO()
        write_cycle_records([rec], buf)
        row = buf.getvalue().strip().split("\n")[1]
        assert row == "1,2,0,3,3,1,2,12.3456789,true,3," + "," + SCENARIO_IS_LAST_ARRIVALS

    def test_cycle_record_round_trip_fields(self, rng_factory):
        cfg = SignalDemandConfig(lam=0.239, p=0.5)
        out = simulate_cycle(cfg, rng_factory(8), cycle_index=7)
        obs = observe(out, sensor=True)
        rec = cycle_record(3, out, obs)
        assert rec[0] == 3 and rec[1] == 7
        assert rec[2] == out.overflow_in and rec[4] == out.total_queue
        assert rec[11] == scenario_of_observation(obs)
