import math

import numpy as np
import pytest
from scipy import stats

from scpricer.collocation import make_basis
from scpricer.conditional import (
    ConditionalGrid, MarginalSampler, build_grid, build_marginal, price_fxfla, price_table_csv,
    reference_levels, row_mean_violations, sample_joint, write_price_table,
)
from scpricer.heston import HestonParams, SimConfig
from scpricer.payoffs import MonitoringSchedule, price_fixed_strike, sample_functionals
from scpricer.regressor import GenerationSpec, TrainConfig, generate_training_set, predict_cvs, train
from scpricer.regressor.data import conditional_rows

from conftest import SET_III

SCHED = MonitoringSchedule.lagged(1.0, 5, 1 / 12)


@pytest.fixture(scope="module")
def set_iii():
    return HestonParams(**SET_III)


@pytest.fixture(scope="module")
def mc_pairs(set_iii):
    return sample_functionals(set_iii, SimConfig(200_000, 1 / 60, 1.0, seed=101), SCHED)


@pytest.fixture(scope="module")
def marginal(set_iii):
    return build_marginal(set_iii, SimConfig(100_000, 1 / 60, 1.0, seed=102), 1.0)


@pytest.fixture(scope="module")
def exact_grid(mc_pairs):
    """Grid rows from MC conditional quantiles (no regressor involved)."""
    a, s_T = mc_pairs
    spec = GenerationSpec("FxFlA", {f: (0, 1) for f in ("r", "kappa", "gamma", "rho", "v_bar", "v0")},
                          1, 1.0, 1, 1 / 60, a.size, 5, 1 / 12, m=14, n_closest=10_000)
    basis = make_basis(14)
    inputs, rows = conditional_rows(spec, basis, [], 1.0, a, s_T)
    inputs = np.array(inputs)
    return ConditionalGrid(inputs[:, 1], inputs[:, 2], np.array(rows), basis, inputs)


def test_reference_levels():
    np.testing.assert_array_equal(reference_levels(0.5, 1.5, 2), [0.5, 1.5])
    assert reference_levels(0.5, 1.5, 15)[7] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        reference_levels(0.5, 1.5, 1)


def test_marginal_deterministic():
    p = HestonParams(0.03, 1.0, 0.5, -0.5, 0.0, 0.0, s0=2.0)
    m = build_marginal(p, SimConfig(100_000, 0.1, 1.0, seed=0), 1.0)
    np.testing.assert_allclose(m.quantile([0.1, 0.5, 0.9]), 2.0 * math.exp(0.03), rtol=1e-13)


def test_marginal_errors(set_iii):
    with pytest.raises(ValueError):
        build_marginal(set_iii, SimConfig(1000, 0.1, 1.0), 1.0)
    with pytest.raises(ValueError):
        build_marginal(set_iii, SimConfig(100_000, 0.1, 0.5), 1.0)


def test_marginal_inverse_property(marginal):
    n = marginal.support.size
    p = np.linspace(0.01, 0.99, 99)
    assert np.all(np.abs(marginal.cdf(marginal.quantile(p)) - p) <= 1.0 / n + 1e-15)


def test_marginal_median_bootstrap(set_iii, marginal):
    other = build_marginal(set_iii, SimConfig(100_000, 1 / 60, 1.0, seed=999), 1.0)
    rng = np.random.default_rng(0)
    boots = [np.median(rng.choice(other.support, other.support.size)) for _ in range(100)]
    se = np.std(boots, ddof=1) * math.sqrt(2)
    assert abs(marginal.quantile(0.5) - other.quantile(0.5)) < 3 * se


def test_marginal_compressed(marginal):
    sc = marginal.compressed(make_basis(21))
    x = sc.sample(100_000, np.random.default_rng(1))
    assert stats.ks_2samp(x, marginal.support).statistic < 0.01


def test_identical_rows_independence(marginal):
    b = make_basis(14)
    row = np.linspace(0.8, 1.2, 14)
    refs = reference_levels(*marginal.quantile([0.05, 0.85]), 15)
    g = ConditionalGrid(refs, marginal.cdf(refs), np.tile(row, (15, 1)), b, np.zeros((15, 9)))
    js = sample_joint(g, marginal, 100_000, seed=3)
    r = np.corrcoef(js.s_T, js.a)[0, 1]
    assert abs(r) < 3 / math.sqrt(js.a.size)


def test_interpolated_rows_monotone(exact_grid):
    rows, clamped = exact_grid.interpolate(np.linspace(0.2, 3.0, 500))
    assert np.all(np.diff(rows, axis=1) >= 0)
    assert clamped.any()


def test_clamp_mode_uses_boundary_rows(exact_grid):
    s = np.array([exact_grid.refs[0] - 1.0, exact_grid.refs[-1] + 1.0, exact_grid.refs[3]])
    rows, out = exact_grid.interpolate(s, outside="clamp")
    np.testing.assert_array_equal(out, [True, True, False])
    np.testing.assert_array_equal(rows[0], exact_grid.rows[0])
    np.testing.assert_array_equal(rows[1], exact_grid.rows[-1])
    np.testing.assert_allclose(rows[2], exact_grid.rows[3], rtol=1e-14)
    with pytest.raises(ValueError):
        exact_grid.interpolate(s, outside="wrap")


def test_extrapolate_mode_continues_end_segments(exact_grid):
    g = exact_grid
    ds = g.refs[1] - g.refs[0]
    rows, out = g.interpolate([g.refs[-1] + ds], outside="extrapolate")
    assert out[0]
    expected = np.maximum.accumulate(2 * g.rows[-1] - g.rows[-2])
    np.testing.assert_allclose(rows[0], expected, rtol=1e-12)


def test_exact_grid_row_means(exact_grid):
    assert row_mean_violations(exact_grid) == 0.0


def test_clamped_fraction(exact_grid, marginal):
    js = sample_joint(exact_grid, marginal, 100_000, seed=4)
    assert js.clamped_fraction <= 0.05 + 1 - 0.85 + 0.02


def test_k1_zero_matches_fixed_strike(exact_grid, marginal, set_iii):
    js = sample_joint(exact_grid, marginal, 100_000, seed=5)
    disc = math.exp(-set_iii.r)
    ks = [0.8, 0.9, 1.0]
    table = price_fxfla(js, [(0.0, k) for k in ks], 1, disc)
    mc = price_fixed_strike(set_iii, SimConfig(100_000, 1 / 60, 1.0, seed=6), SCHED, ks)
    for row, (v, se) in zip(table, mc):
        assert abs(row["price"] - v) < 3 * math.hypot(row["std_err"], se)


def test_joint_marginal_of_a_matches_mc(exact_grid, marginal, set_iii):
    js = sample_joint(exact_grid, marginal, 100_000, seed=7)
    a_mc, _ = sample_functionals(set_iii, SimConfig(100_000, 1 / 60, 1.0, seed=8), SCHED)
    assert stats.ks_2samp(js.a, a_mc).pvalue > 0.01


def test_price_zero_for_huge_k1(exact_grid, marginal):
    js = sample_joint(exact_grid, marginal, 20_000, seed=9)
    row = price_fxfla(js, [(50.0, 0.5)], 1, 1.0)[0]
    assert row["price"] == 0.0 and row["std_err"] == 0.0


def test_price_table_csv(tmp_path):
    table = [{"K1": 0.5, "K2": 0.4, "omega": 1, "price": 0.1, "std_err": 0.001}]
    text = price_table_csv(table)
    assert text.splitlines() == ["K1,K2,omega,price,std_err", "0.5,0.4,1,0.1,0.001"]
    write_price_table(table, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text() == text


@pytest.fixture(scope="module")
def tiny_model():
    ranges = {"r": (0.0, 0.05), "kappa": (0.2, 1.1), "gamma": (0.8, 1.1), "rho": (-0.92, -0.28),
              "v_bar": (0.03, 0.10), "v0": (0.03, 0.10)}
    spec = GenerationSpec("FxFlA", ranges, 6, 1.0, 3, 1 / 60, 20_000, 5, 1 / 12, maturity_stride=3,
                          m=14, n_closest=2000, seed=1)
    ts = generate_training_set(spec)
    return train(ts, TrainConfig(epochs=30, batch_size=64, hidden=(16,), seed=0))


def test_build_grid_rows_equal_predictions(tiny_model, marginal):
    p = HestonParams(0.02, 0.6, 0.95, -0.6, 0.06, 0.06)
    m = build_marginal(p, SimConfig(100_000, 1 / 60, 1.0, seed=11), 1.0)
    g = build_grid(tiny_model, p, m, 1.0)
    assert g.q_count == 15 and np.all(np.diff(g.refs) > 0)
    np.testing.assert_allclose(np.diff(g.refs), np.diff(g.refs)[0], rtol=1e-9)
    for q in (0, 7, 14):
        np.testing.assert_array_equal(g.rows[q], predict_cvs(tiny_model, g.inputs[q]).a)
    js = sample_joint(g, m, 2000, seed=1)
    jb = sample_joint(g, m, 2000, seed=1, mode="brute", model=tiny_model, params=p, maturity=1.0)
    np.testing.assert_array_equal(js.s_T, jb.s_T)
    with pytest.raises(ValueError):
        sample_joint(g, m, 10, mode="brute")


def test_build_grid_errors(tiny_model, set_iii):
    far = HestonParams(0.02, 0.6, 0.95, -0.6, 0.06, 0.06, s0=50.0)
    m = build_marginal(far, SimConfig(100_000, 1 / 60, 1.0, seed=12), 1.0)
    # s0 scaling keeps S^q/s0 in range; a marginal from another s0 does not
    other = build_marginal(far.scaled(5.0), SimConfig(100_000, 1 / 60, 1.0, seed=12), 1.0)
    with pytest.raises(ValueError, match="outside the trained range"):
        build_grid(tiny_model, far, other, 1.0)
    tiny_model.schema, schema = "FxA", tiny_model.schema
    try:
        with pytest.raises(ValueError, match="FxFlA"):
            build_grid(tiny_model, far, m, 1.0)
    finally:
        tiny_model.schema = schema
