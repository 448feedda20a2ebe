import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvqueue.core import P_GRID_FULL, SignalDemandConfig
from cvqueue.harness import RHO_GRID, lam_for_rho
from cvqueue.overflow import (
    CYCLE_KINDS,
    OVERFLOW_KINDS,
    RHO_CAP,
    STEADY_KINDS,
    ClampLog,
    DivergenceError,
    OverflowModel,
    approx_expected_n,
    approx_variance_d,
    capped_rho,
    cv_presence_weight,
    cycle_overflow_mean,
    negative_variance_cells,
    scenario_probs,
    steady_expected_n,
    steady_overflow_mean,
    steady_overflow_variance,
)
from cvqueue.sim import advance_overflow, simulate_cycle, substream_rng

ONSET = 0.71
RED = 45.0
CAPACITY = 24.0


def _cfg(rho: float, p: float) -> SignalDemandConfig:
    return SignalDemandConfig(lam=lam_for_rho(rho), p=p)


class TestSteadyMeans:
    def test_pinned_values(self):
        assert steady_overflow_mean(0.8, ONSET, RED, "akcelik") == pytest.approx(1.6, abs=1e-12)
        assert steady_overflow_mean(0.98, ONSET, RED, "akcelik") == pytest.approx(24.01, abs=1e-10)
        assert steady_overflow_mean(0.8, ONSET, RED, "onset") == pytest.approx(0.675, abs=1e-12)
        assert steady_overflow_mean(0.6, ONSET, RED, "quartic") == pytest.approx(0.0324, abs=1e-12)
        assert steady_overflow_mean(0.8, ONSET, RED, "heuristic_exp") == pytest.approx(
            2.474346587333319, abs=1e-12
        )

    @pytest.mark.parametrize("kind", STEADY_KINDS)
    def test_monotone_in_rho(self, kind):
        vals = [steady_overflow_mean(r, ONSET, RED, kind) for r in (0.72, 0.8, 0.9, 0.97)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("kind", STEADY_KINDS)
    def test_diverges_at_saturation(self, kind):
        with pytest.raises(DivergenceError):
            steady_overflow_mean(1.0, ONSET, RED, kind)
        with pytest.raises(DivergenceError):
            steady_overflow_mean(1.3, ONSET, RED, kind)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            steady_overflow_mean(0.8, ONSET, RED, "webster")


class TestSteadyVariance:
    def test_pinned_values(self):
        assert steady_overflow_variance(0.8) == pytest.approx(3.4133333333333, abs=1e-10)
        assert steady_overflow_variance(0.6) == pytest.approx(0.3825, abs=1e-12)

    def test_monotone_and_divergent(self):
        vals = [steady_overflow_variance(r) for r in (0.5, 0.7, 0.9, 0.98)]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        with pytest.raises(DivergenceError):
            steady_overflow_variance(1.0)


class TestCycleMeans:
    def test_saturating_pinned(self):
        # rho=0.88: target 1.5*0.17/0.12 = 2.125, scaled by 1 - e^{-1} at i=10
        v = cycle_overflow_mean(0.88, ONSET, CAPACITY, 10, kind="saturating", beta=0.1)
        assert v == pytest.approx(2.125 * -math.expm1(-1.0), abs=1e-9)
        assert v == pytest.approx(1.3432561875106854, abs=1e-12)

    def test_akcelik_time_sum_form_pinned(self):
        v = cycle_overflow_mean(0.88, ONSET, CAPACITY, 10, kind="akcelik_time", sum_form=True)
        assert v == pytest.approx(1.8796475702529354, abs=1e-12)

    def test_akcelik_time_product_form_zero_below_saturation(self):
        # the product form multiplies by (rho - 1), so any undersaturated
        # rho clamps to zero -- kept as-is, with the sum form as the flag
        for rho in (0.6, 0.8, 0.88, 0.98):
            assert cycle_overflow_mean(rho, ONSET, CAPACITY, 10, kind="akcelik_time") == 0.0

    def test_akcelik_time_grows_past_saturation(self):
        vals = [
            cycle_overflow_mean(1.05, ONSET, CAPACITY, i, kind="akcelik_time")
            for i in (1, 10, 50)
        ]
        assert vals[0] > 0.0
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_saturating_monotone_and_bounded(self):
        target = steady_overflow_mean(0.8, ONSET, RED, "onset")
        vals = [
            cycle_overflow_mean(0.8, ONSET, CAPACITY, i, kind="saturating")
            for i in range(1, 202, 20)
        ]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert all(v < target for v in vals)
        assert vals[-1] == pytest.approx(target, rel=1e-8)

    def test_negative_clamp_is_counted(self):
        log = ClampLog()
        v = cycle_overflow_mean(0.5, ONSET, CAPACITY, 1, kind="akcelik_time", clamps=log)
        assert v == 0.0
        assert log.negative_expected_q == 1

    def test_cycle_index_validated(self):
        with pytest.raises(ValueError):
            cycle_overflow_mean(0.8, ONSET, CAPACITY, 0, kind="saturating")


class TestOverflowModel:
    def test_kind_partition(self):
        assert set(STEADY_KINDS) | set(CYCLE_KINDS) == set(OVERFLOW_KINDS)
        assert OverflowModel("akcelik").is_steady
        assert not OverflowModel("saturating").is_steady

    def test_rejects_bad_construction(self):
        with pytest.raises(ValueError):
            OverflowModel("webster")
        with pytest.raises(ValueError):
            OverflowModel("saturating", beta=0.0)

    def test_expected_q_refuses_cycle_kinds(self):
        with pytest.raises(ValueError):
            OverflowModel("saturating").expected_q(_cfg(0.8, 0.3))

    def test_expected_q_at_constant_for_steady_kinds(self):
        model = OverflowModel("akcelik")
        cfg = _cfg(0.8, 0.3)
        assert model.expected_q_at(cfg, 1) == model.expected_q_at(cfg, 500)
        assert model.expected_q_at(cfg, 1) == model.expected_q(cfg)

    def test_explicit_rho_overrides_config(self):
        model = OverflowModel("akcelik")
        cfg = _cfg(0.8, 0.3)
        assert model.expected_q(cfg, rho=0.6) == steady_overflow_mean(0.6, ONSET, RED, "akcelik")
        assert model.variance_q(cfg, rho=0.6) == steady_overflow_variance(0.6)


class TestClamps:
    def test_capped_rho(self):
        log = ClampLog()
        assert capped_rho(1.7, log) == RHO_CAP
        assert log.rho_capped == 1
        assert capped_rho(0.5, log) == 0.5
        assert log.rho_capped == 1  # unchanged

    def test_as_dict_round_trip(self):
        log = ClampLog()
        capped_rho(2.0, log)
        d = log.as_dict()
        assert d["rho_capped"] == 1
        assert set(d) == {
            "negative_expected_q",
            "negative_radicand",
            "rho_capped",
            "p_hat_clamped",
            "lambda_hat_clamped",
        }
        assert log.total() == 1


class TestScenarioProbs:
    def test_pinned_example(self):
        sp = scenario_probs(SignalDemandConfig(lam=0.218, p=0.2), 1.6)
        assert sp.in_arrivals == pytest.approx(0.8594230143916726, abs=1e-12)
        assert sp.no_cv == pytest.approx(0.12126512677970795, abs=1e-12)
        assert sp.in_overflow == pytest.approx(0.01931185882861948, abs=1e-12)

    def test_zero_overflow_queue(self):
        sp = scenario_probs(SignalDemandConfig(lam=0.218, p=0.2), 0.0)
        assert sp.in_overflow == pytest.approx(0.0, abs=1e-12)

    @given(
        lam=st.floats(0.05, 0.3),
        p=st.floats(0.01, 1.0),
        e_q=st.floats(0.0, 30.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_sums_to_one(self, lam, p, e_q):
        sp = scenario_probs(SignalDemandConfig(lam=lam, p=p), e_q)
        assert sp.in_overflow + sp.in_arrivals + sp.no_cv == pytest.approx(1.0, abs=1e-12)
        for v in (sp.in_overflow, sp.in_arrivals, sp.no_cv):
            assert -1e-12 <= v <= 1.0 + 1e-12


class TestCvPresenceWeight:
    def test_pinned(self):
        # 9.87*0.04 - 4.62*0.2 + 0.991
        assert cv_presence_weight(0.2) == pytest.approx(0.4618, abs=1e-12)
        assert cv_presence_weight(1.0) == pytest.approx(9.87 - 4.62 + 0.991, abs=1e-12)


class TestApproxVarianceD:
    def test_pinned_values(self):
        cfg = _cfg(0.8, 0.1)
        model = OverflowModel("akcelik")
        assert approx_variance_d(cfg, model, sensor=False) == pytest.approx(
            7.612182195930616, abs=1e-10
        )
        assert approx_variance_d(cfg, model, sensor=True) == pytest.approx(
            6.388832670162515, abs=1e-10
        )

    def test_sensor_helps_on_acceptance_grid(self):
        model = OverflowModel("akcelik")
        for rho in RHO_GRID:
            for p in P_GRID_FULL:
                cfg = _cfg(rho, p)
                off = approx_variance_d(cfg, model, sensor=False)
                on = approx_variance_d(cfg, model, sensor=True)
                assert on <= off + 1e-12

    def test_no_negative_cells_on_acceptance_grid(self):
        model = OverflowModel("akcelik")
        grid = [_cfg(r, p) for r in RHO_GRID for p in P_GRID_FULL]
        assert negative_variance_cells(model, grid) == []
        assert negative_variance_cells(model, grid, sensor=False) == []

    def test_known_negative_cell_is_reported(self):
        # the sensor bracket's -p*theta*R term wins when E(Q) is tiny and p
        # is near 1; the scan is how that formula-fidelity fact stays visible
        model = OverflowModel("akcelik")
        cells = negative_variance_cells(model, [_cfg(0.40, 0.97)])
        assert len(cells) == 1
        rho, p, value = cells[0]
        assert rho == pytest.approx(0.40, abs=1e-9)
        assert p == 0.97
        assert value == pytest.approx(-0.00027726498418618475, abs=1e-12)
        assert negative_variance_cells(model, [_cfg(0.40, 0.97)], sensor=False) == []


class TestExpectedN:
    def test_pinned_values(self):
        model = OverflowModel("akcelik")
        assert approx_expected_n(_cfg(0.88, 0.3), model) == pytest.approx(
            13.795569874921688, abs=1e-10
        )
        assert steady_expected_n(_cfg(0.7, 0.3), model) == pytest.approx(
            8.76508727257016, abs=1e-10
        )

    def test_merged_splits_collapse_to_approx(self):
        # merging the overflow/arrival conditional means reproduces the
        # single-bracket approximation exactly
        model = OverflowModel("akcelik")
        cfg = _cfg(0.7, 0.3)
        merged = steady_expected_n(cfg, model, merge_splits=True)
        assert merged == pytest.approx(approx_expected_n(cfg, model), abs=1e-12)

    def test_diverges_at_saturation(self):
        model = OverflowModel("akcelik")
        with pytest.raises(DivergenceError):
            steady_expected_n(_cfg(1.01, 0.3), model)


@pytest.mark.slow
class TestAgainstSimulation:
    """Loose bands: steady formulas vs the cycle-chained simulator."""

    def _sim_mean_overflow(self, rho: float, n_cycles: int, warmup: int, seed: int) -> float:
        cfg = _cfg(rho, 0.5)
        rng = substream_rng(seed, 0, 0)
        carry_sizes = []
        from cvqueue.sim import CarriedQueue

        carry = CarriedQueue.empty()
        for i in range(1, n_cycles + 1):
            out = simulate_cycle(cfg, rng, carry, cycle_index=i)
            if i > warmup:
                carry_sizes.append(out.overflow_in)
            carry = advance_overflow(cfg, out, rng)
        return float(np.mean(carry_sizes))

    def test_moderate_load_band(self):
        # akcelik at rho=0.8 gives 1.6; the sim should land in a loose band
        mean_q = self._sim_mean_overflow(0.8, 6000, 1000, seed=101)
        assert 0.3 <= mean_q <= 1.8

    def test_heavy_load_band(self):
        # near saturation mixing is slow; just bracket the magnitude
        mean_q = self._sim_mean_overflow(0.98, 9000, 3000, seed=102)
        assert 10.0 <= mean_q <= 35.0
