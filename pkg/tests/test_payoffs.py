import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scpricer.heston import HestonParams, SimConfig, iter_chunks, simulate
from scpricer.payoffs import (
    MonitoringSchedule, PayoffSpec, aggregate, confidence_interval, mc_price, payoff,
    price_fixed_strike, price_floating_strike, sample_functionals,
)


def test_schedule():
    s = MonitoringSchedule.equally_spaced(0.25, 201)
    assert s.n == 201 and s.dates[0] == 0 and s.maturity == 0.25
    lag = MonitoringSchedule.lagged(1.0, 5, 1 / 12)
    assert lag.n == 5 and lag.maturity == 1.0
    assert lag.dates[0] == pytest.approx(1 - 4 / 12)
    with pytest.raises(ValueError):
        MonitoringSchedule((0.1, 0.1))
    with pytest.raises(ValueError):
        MonitoringSchedule.lagged(0.2, 5, 0.1)


def test_aggregate_examples():
    assert aggregate([1.0, 2.0, 3.0], "min") == 1
    assert aggregate([1.0, 2.0, 3.0], "mean") == 2
    assert aggregate([1.0, 2.0, 3.0], "max") == 3
    for agg in ("mean", "min", "max"):
        assert aggregate([4.2] * 7, agg) == pytest.approx(4.2)
    with pytest.raises(ValueError):
        aggregate([], "mean")
    with pytest.raises(ValueError):
        aggregate([1.0], "median")


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=40))
def test_aggregate_homogeneity(vals):
    v = np.array(vals)
    assert aggregate(3.7 * v, "mean") == pytest.approx(3.7 * aggregate(v, "mean"), rel=1e-12)
    assert aggregate(3.7 * v, "min") == 3.7 * aggregate(v, "min")


def test_payoff_examples():
    assert payoff(2.0, 0.0, PayoffSpec("mean", 1, 0.0, 1.0)) == 1
    assert payoff(2.0, 0.0, PayoffSpec("mean", -1, 0.0, 3.0)) == 1
    assert payoff(1.5, 1.0, PayoffSpec("mean", 1, 0.5, 0.5, "fixed_and_floating")) == pytest.approx(0.5)


def test_spec_validation():
    with pytest.raises(ValueError):
        PayoffSpec("mean", 2, 0.0, 1.0)
    with pytest.raises(ValueError):
        PayoffSpec("mean", 1, 0.5, 1.0, "fixed")
    lb = PayoffSpec.lookback(-1, k2=1.0)
    assert lb.aggregator == "min"
    assert PayoffSpec.lookback(1, k2=1.0).aggregator == "max"


def test_mc_price_basic():
    assert mc_price(np.zeros(10), None, PayoffSpec("mean", 1, 0.0, 1.0), 0.9) == (0.0, 0.0)
    a = np.array([1.0, 2.0, 3.0, 4.0])
    price, se = mc_price(a, None, PayoffSpec("mean", 1, 0.0, 2.0), 0.5)
    pay = np.array([0, 0, 1, 2.0]) * 0.5
    assert price == pytest.approx(pay.mean())
    assert se == pytest.approx(pay.std(ddof=1) / 2)
    with pytest.raises(ValueError):
        mc_price(a, np.ones(3), PayoffSpec("mean", 1, 0.5, 1.0, "fixed_and_floating"), 1.0)
    lo, hi = confidence_interval(1.0, 0.1)
    assert (lo, hi) == pytest.approx((0.804, 1.196))


def test_zero_strike_call_is_mean(set_i):
    sched = MonitoringSchedule.lagged(1.0, 5, 0.25)
    cfg = SimConfig(5000, 0.05, 1.0, seed=1)
    a, _ = sample_functionals(set_i, cfg, sched)
    price, _ = mc_price(a, None, PayoffSpec("mean", 1, 0.0, 0.0), 0.97)
    assert price == pytest.approx(0.97 * a.mean(), rel=1e-13)


def test_strike_monotonicity(set_i):
    sched = MonitoringSchedule.lagged(1.0, 5, 0.25)
    cfg = SimConfig(5000, 0.05, 1.0, seed=1)
    ks = np.linspace(0.6, 1.4, 17)
    calls = [p for p, _ in price_fixed_strike(set_i, cfg, sched, ks, 1)]
    puts = [p for p, _ in price_fixed_strike(set_i, cfg, sched, ks, -1)]
    assert np.all(np.diff(calls) <= 0)
    assert np.all(np.diff(puts) >= 0)


def test_lookback_shift_exact():
    p = HestonParams(0.0, 1.0, 0.5, -0.3, 0.1, 0.1, s0=0.08)
    theta = 0.03
    cfg = SimConfig(2000, 1 / 120, 0.5, seed=4)
    dates = np.arange(31, 61) / 120
    raw = simulate(p, cfg, dates).values
    shifted = simulate(HestonParams(0.0, 1.0, 0.5, -0.3, 0.1, 0.1, s0=0.08, shift=theta), cfg, dates)
    np.testing.assert_array_equal(aggregate(shifted.displaced, "min"), aggregate(raw, "min") - theta)


def test_threads_bit_identical(set_i):
    sched = MonitoringSchedule.lagged(1.0, 5, 0.25)
    cfg = SimConfig(40_000, 0.05, 1.0, seed=3)
    a1, s1 = sample_functionals(set_i, cfg, sched, threads=1)
    a2, s2 = sample_functionals(set_i, cfg, sched, threads=2)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(s1, s2)


def test_floating_strike_stock_measure_vs_direct(set_i):
    # Set I: floating-strike Asian, stock-measure route vs direct risk-neutral MC
    sched = MonitoringSchedule.lagged(1.0, 5, 1 / 12)
    k1s = [0.9, 1.0, 1.1]
    cfg = SimConfig(100_000, 1 / 120, 1.0, seed=21)
    fl = price_floating_strike(set_i, cfg, sched, k1s, 1)
    a, s_T = sample_functionals(set_i, SimConfig(100_000, 1 / 120, 1.0, seed=22), sched)
    disc = math.exp(-set_i.r)
    for k1, (v, se) in zip(k1s, fl):
        d, dse = mc_price(a, s_T, PayoffSpec("mean", 1, k1, 0.0, "fixed_and_floating"), disc)
        assert abs(v - d) < 3 * math.hypot(se, dse)
