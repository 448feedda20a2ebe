import json

import numpy as np
import pytest

from cvqueue.core import SignalDemandConfig
from cvqueue.oracle import (
    batch_means,
    coverage_gaps,
    mc_conditional_oracle,
    overflow_oracle,
    quadrature_oracle,
    run_oracle,
    sample_overflow,
)
from cvqueue.overflow import OverflowModel

CFG = SignalDemandConfig(lam=0.239, p=0.5)


class TestBatchMeans:
    def test_constant_series(self):
        overall, se = batch_means(np.ones(1000))
        assert overall == 1.0 and se == 0.0

    def test_overall_uses_all_samples_batches_truncate(self):
        overall, se = batch_means(np.arange(1037, dtype=float))
        assert overall == 518.0  # full-array mean
        # batch means over the first 1000 only: 4.5, 14.5, ..., 994.5
        expected_sd = np.std(np.arange(100) * 10.0 + 4.5, ddof=1)
        assert se == pytest.approx(expected_sd / 10.0, rel=1e-12)

    def test_variance_statistic(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0.0, 2.0, 20000)
        overall, se = batch_means(x, stat="var")
        assert overall == pytest.approx(4.0, rel=0.1)
        assert 0.0 < se < 0.3

    def test_single_sample_batches_have_no_variance_se(self):
        overall, se = batch_means(np.arange(100, dtype=float), stat="var")
        assert overall == pytest.approx(np.arange(100).var(ddof=1))
        assert np.isnan(se)

    def test_rejects_short_input_and_bad_stat(self):
        with pytest.raises(ValueError):
            batch_means(np.ones(50), n_batches=100)
        with pytest.raises(ValueError):
            batch_means(np.ones(1000), stat="median")


class TestMcConditionalOracle:
    def test_e_t_verdict(self):
        r = mc_conditional_oracle(CFG, "e_t", n=20000, seed=3)
        assert r.verdicts == {"exact": True}
        assert r.oracle_se > 0.0
        assert abs(r.variants["exact"] - r.oracle_value) < 3 * r.oracle_se

    def test_e_l_exact_true_approx_false(self):
        # the compact closed form drops the no-CV/last-CV coupling and sits
        # about one vehicle low at p=0.5; a 20k-cycle oracle resolves that
        r = mc_conditional_oracle(CFG, "e_l", n=20000, seed=3)
        assert r.verdicts["exact"] is True
        assert r.verdicts["approx"] is False

    def test_rerun_is_bit_identical(self):
        a = mc_conditional_oracle(CFG, "e_l", n=20000, seed=3).to_json_dict()
        b = mc_conditional_oracle(CFG, "e_l", n=20000, seed=3).to_json_dict()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_json_schema(self):
        d = mc_conditional_oracle(CFG, "e_t", n=20000, seed=3).to_json_dict()
        assert sorted(d) == ["oracle", "quantity", "variants", "verdicts"]
        assert sorted(d["oracle"]) == ["se", "value"]
        json.dumps(d)  # everything serializable

    def test_inconclusive_when_followers_scarce(self):
        # at p=0.995 almost every vehicle is connected, so the last CV is
        # nearly always the last vehicle and follower cycles are rare
        weak = SignalDemandConfig(lam=0.111, p=0.995)
        r = mc_conditional_oracle(weak, "e_t_prime", n=10000, seed=3)
        assert r.n_samples < 100
        assert r.verdicts == {"exact": None, "approx": None}
        assert json.loads(json.dumps(r.to_json_dict()))["verdicts"]["exact"] is None

    def test_minimum_sample_size_enforced(self):
        with pytest.raises(ValueError):
            mc_conditional_oracle(CFG, "e_t", n=500, seed=3)

    def test_t_distribution_ks(self):
        r = mc_conditional_oracle(CFG, "t_distribution", n=20000, seed=3)
        assert r.verdicts == {"conditional_cdf": True}
        assert r.oracle_value < 0.012  # observed KS statistic, 20k draws


class TestQuadratureOracle:
    def test_density_normalizes(self):
        r = quadrature_oracle(CFG, "t_density_normalization")
        assert r.verdicts == {"unit": True}
        assert r.oracle_value == pytest.approx(1.0, abs=1e-9)

    def test_density_mean_matches_zero_fill_expectation(self):
        r = quadrature_oracle(CFG, "t_density_mean")
        assert r.verdicts == {"zero_fill": True}
        assert r.oracle_value == pytest.approx(36.67045486105664, abs=1e-9)

    def test_follow_probability_integral_separates_forms(self):
        # the integral agrees with itself; both closed forms differ from it
        # by more than quadrature error (one slightly, one grossly)
        r = quadrature_oracle(CFG, "p_follow_integrand")
        assert r.verdicts["integral"] is True
        assert r.verdicts["approx"] is False
        assert r.verdicts["exact"] is False
        assert r.oracle_value == pytest.approx(0.66511977, abs=1e-7)


class TestOverflowOracle:
    def test_shared_sample_reuse(self):
        cfg = SignalDemandConfig(lam=0.218, p=0.3)
        model = OverflowModel("akcelik")
        sample = sample_overflow(cfg, model, n_cycles=400, reps=2, seed=5, warmup=50)
        a = overflow_oracle(cfg, "overflow_mean", model=model, sample=sample)
        b = overflow_oracle(cfg, "overflow_mean", model=model, sample=sample)
        assert a.to_json_dict() == b.to_json_dict()
        assert set(a.variants) == {"akcelik", "onset", "quartic", "heuristic_exp"}
        assert all(v in (True, False, None) for v in a.verdicts.values())

    def test_three_scenario_mean_against_sim(self):
        cfg = SignalDemandConfig(lam=0.218, p=0.3)
        model = OverflowModel("akcelik")
        sample = sample_overflow(cfg, model, n_cycles=400, reps=2, seed=5, warmup=50)
        r = overflow_oracle(cfg, "approx_e_n", model=model, sample=sample)
        assert list(r.variants) == ["three_scenario"]
        assert r.verdicts["three_scenario"] is True


class TestRegistry:
    def test_no_coverage_gaps(self):
        assert coverage_gaps() == []

    def test_dispatch_and_unknown_quantity(self):
        r = run_oracle("p_no_cv", CFG, n=20000, seed=3)
        assert r.verdicts == {"exp": True}
        with pytest.raises(ValueError):
            run_oracle("e_q_exact", CFG)
