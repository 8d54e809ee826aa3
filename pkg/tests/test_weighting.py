import math

import numpy as np
import pytest

from goatlab.errors import ConfigError
from goatlab.replay import FifoQueue, quantile
from goatlab.weighting import (
    WeightConfig,
    WeightQueues,
    alpha_schedule,
    combine,
    drw,
    dsw,
    eaw,
    normalized_std,
    uw,
)

CFG = WeightConfig()


class TestEaw:
    def test_zero_advantage(self):
        assert eaw(0.0, CFG) == 1.0

    def test_half(self):
        assert eaw(0.5, CFG) == pytest.approx(math.e, rel=1e-12)

    def test_clipped(self):
        assert math.exp(6) == pytest.approx(403.4, abs=0.05)
        assert eaw(3.0, CFG) == 10.0

    def test_huge_advantage_does_not_overflow(self):
        with np.errstate(over="raise"):
            assert eaw(1e6, CFG) == 10.0

    def test_monotone_and_positive(self):
        A = np.sort(np.random.default_rng(0).normal(scale=3, size=1000))
        w = eaw(A, CFG)
        assert (w > 0).all() and (np.diff(w) >= 0).all()
        strict = w[1:] < CFG.eaw_clip
        assert (np.diff(w)[strict & (np.diff(A) > 0)] > 0).all()


class TestDsw:
    def test_above(self):
        assert dsw(0.2, 0.1, CFG) == 1.0

    def test_below(self):
        assert dsw(0.05, 0.1, CFG) == 0.05

    def test_inclusive(self):
        assert dsw(0.1, 0.1, CFG) == 1.0

    def test_selects_top_fifth_at_alpha_80(self):
        values = np.random.default_rng(1).permutation(np.arange(5000, dtype=float))
        q = FifoQueue(50_000).push_many(values)
        c = quantile(q, 80)
        frac = np.mean(dsw(values, c, CFG) == 1.0)
        assert abs(frac - 0.2) <= 1.0 / len(values)


class TestUw:
    def test_zero_norm(self):
        for w in (0.5, 1.0, 2.0, 4.0):
            assert uw(0.0, 0.0, 1.0, WeightConfig(uw_sharpness=w)) == 0.5

    def test_full_norm_clipped(self):
        assert math.tanh(2.5) + 0.5 == pytest.approx(1.4866, abs=1e-4)
        assert uw(1.0, 0.0, 1.0, WeightConfig(uw_sharpness=2.5)) == 1.0

    def test_half_norm(self):
        assert uw(0.5, 0.0, 1.0, WeightConfig(uw_sharpness=1.0)) == pytest.approx(0.9621, abs=1e-4)

    def test_degenerate_range(self):
        assert normalized_std(3.0, 2.0, 2.0) == 0.0
        assert uw(3.0, 2.0, 2.0, CFG) == 0.5

    def test_clamps_outside_range(self):
        assert normalized_std(-1.0, 0.0, 1.0) == 0.0
        assert normalized_std(5.0, 0.0, 1.0) == 1.0

    def test_monotone_and_range(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            lo, hi = np.sort(rng.uniform(0, 2, size=2))
            w = rng.uniform(0.1, 5)
            std = np.sort(rng.uniform(lo, hi, size=100))
            vals = uw(std, lo, hi, WeightConfig(uw_sharpness=w))
            assert (np.diff(vals) >= 0).all()
            assert (vals >= 0.5).all() and (vals <= 1.0).all()


class TestDrw:
    def test_same_index(self):
        assert drw(3, 3, 0.98) == 1.0

    def test_ten_steps(self):
        assert drw(10, 0, 0.98) == pytest.approx(0.8171, abs=1e-4)

    def test_disabled(self):
        assert (drw(np.arange(5, 10), np.zeros(5, int), 0.98, enabled=False) == 1).all()

    def test_index_before_transition(self):
        with pytest.raises(IndexError):
            drw(2, 3, 0.98)


class TestAlphaSchedule:
    def test_ramp(self):
        assert alpha_schedule(0, 1000, CFG) == 0.0
        assert alpha_schedule(100, 1000, CFG) == pytest.approx(40.0)
        assert alpha_schedule(200, 1000, CFG) == 80.0
        assert alpha_schedule(900, 1000, CFG) == 80.0

    def test_no_ramp(self):
        assert alpha_schedule(0, 10, WeightConfig(ramp_fraction=0.0)) == 80.0


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(beta=-1), dict(eaw_clip=0), dict(alpha_max=101), dict(eps_low=0), dict(uw_sharpness=0), dict(w_min=1.5)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            WeightConfig(**kw)


class TestCombine:
    def test_product_of_factors(self):
        cfg = WeightConfig(dsw_warmup=0)
        A = np.array([0.1, 0.5, -0.2, 0.3])
        std = np.array([0.0, 1.0, 0.5, 0.25])
        b = combine(A, std, WeightQueues(100), cfg, 80.0)
        np.testing.assert_allclose(b.product, b.eaw * b.dsw * b.uw * b.drw, rtol=0, atol=0)
        assert set(np.unique(b.dsw)) <= {cfg.eps_low, 1.0}
        assert ((b.uw >= 0.5) & (b.uw <= 1.0)).all()

    def test_example_product(self):
        # uw = 0.5 (zero std range), eaw = 2 (A = ln 2 / beta), dsw = 1 (warm-up), drw = 1
        A = np.array([math.log(2) / 2])
        b = combine(A, np.array([0.3]), WeightQueues(10), CFG, 80.0)
        assert b.product[0] == pytest.approx(1.0, rel=1e-12)

    def test_product_always_positive(self):
        rng = np.random.default_rng(0)
        q = WeightQueues(5000)
        cfg = WeightConfig(dsw_warmup=10)
        for _ in range(50):
            b = combine(rng.normal(scale=5, size=64), rng.exponential(size=64), q, cfg, 80.0)
            assert (b.product > 0).all()

    def test_warmup_disables_selection(self):
        b = combine(np.linspace(-1, 1, 50), np.zeros(50), WeightQueues(100), WeightConfig(dsw_warmup=1000), 80.0)
        assert (b.dsw == 1).all() and b.threshold is None

    def test_pushes_before_reading(self):
        q = WeightQueues(100)
        A = np.arange(10, dtype=float)
        b = combine(A, np.arange(10, dtype=float), q, WeightConfig(dsw_warmup=1), 80.0)
        assert len(q.advantages) == 10 and len(q.stds) == 10
        assert b.threshold == 7.0
        assert b.uw[0] == 0.5 and b.uw[-1] == 1.0

    def test_ablation_flags(self):
        A = np.array([0.4, -0.3])
        std = np.array([0.2, 0.9])
        marwil = combine(A, std, WeightQueues(10), WeightConfig(use_dsw=False, use_uw=False), 80.0)
        np.testing.assert_array_equal(marwil.product, eaw(A, CFG))
        cfg = WeightConfig(use_uw=False, dsw_warmup=0)
        wgcsl = combine(A, std, WeightQueues(10), cfg, 80.0)
        np.testing.assert_array_equal(wgcsl.product, eaw(A, cfg) * wgcsl.dsw)
        assert (wgcsl.uw == 1).all()

    def test_discounted_relabel_weight(self):
        cfg = WeightConfig(drw_enabled=True, use_dsw=False, use_uw=False, use_eaw=False)
        t = np.array([0, 5, 3])
        idx = np.array([1, 15, -1])  # state indices; -1 keeps the original goal
        b = combine(np.zeros(3), np.zeros(3), WeightQueues(10), cfg, 0.0, idx, t, 0.98)
        np.testing.assert_allclose(b.drw, [1.0, 0.98**9, 1.0])
