import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from scpricer.collocation import (
    CollocationValues, PiecewiseMap, build_map, change_of_basis, chebyshev_nodes, cvs_from_samples,
    evaluate_rows, inverse_map, isotonic, make_basis, polyval, sample_through,
)


def test_nodes_examples():
    np.testing.assert_allclose(chebyshev_nodes(3, 1.0), [-1, 0, 1], atol=1e-15)
    b = make_basis(21, 2.46)
    assert b.nodes[0] == -2.46 and b.nodes[20] == 2.46 and b.nodes[10] == 0.0
    assert np.all(np.diff(b.nodes) > 0)
    # independent evaluation of -xi_bar cos(pi/4) for m=5, xi_bar=2
    assert make_basis(5, 2.0).nodes[1] == pytest.approx(-math.sqrt(2), abs=1e-15)


def test_default_xi_bar():
    assert make_basis().xi_bar == pytest.approx(2.457, abs=1e-3)


def test_basis_errors():
    with pytest.raises(ValueError):
        make_basis(1)
    with pytest.raises(ValueError):
        make_basis(2, 1.0, tail_degree=2)
    with pytest.raises(ValueError):
        make_basis(5, 0.0)
    with pytest.raises(ValueError):
        make_basis(5, 1.0, tail_degree=3)


def test_inverse_vandermonde_identity():
    unit = make_basis(21, 1.0)
    v = np.vander(unit.nodes, increasing=True)
    assert np.abs(unit.inv_vandermonde @ v - np.eye(21)).max(axis=1).max() < 1e-8
    # at xi_bar = 2.46 entries of V reach 2.46^20, so the check is relative to |V^-1| |V|
    b = make_basis(21, 2.46)
    v = np.vander(b.nodes, increasing=True)
    err = np.abs(b.inv_vandermonde @ v - np.eye(21)).max(axis=1)
    scale = (np.abs(b.inv_vandermonde) @ np.abs(v)).max(axis=1)
    assert (err / scale).max() < 1e-8


def test_change_of_basis_examples():
    np.testing.assert_allclose(change_of_basis([0, 1], [-1, 1]), [0.5, 0.5])
    np.testing.assert_allclose(change_of_basis([2.5] * 4, [-1, -0.3, 0.2, 1]), [2.5, 0, 0, 0], atol=1e-14)
    with pytest.raises(ValueError):
        change_of_basis([1, 2, 3], [0, 0, 1])
    with pytest.raises(ValueError):
        change_of_basis([1, 2], [0, 1, 2])


def test_change_of_basis_roundtrip_m21():
    b = make_basis(21, 2.46)
    alpha = np.random.default_rng(0).normal(size=21) / np.arange(1, 22) ** 2
    back = change_of_basis(polyval(alpha, b.nodes), b.nodes)
    np.testing.assert_allclose(back, alpha, atol=1e-8)


def test_build_map_examples():
    g = build_map([0.0, 1.0], make_basis(2, 1.0))
    assert g(0.0) == pytest.approx(0.5)
    b3 = make_basis(3, 1.0)
    # a = {1, 0, 1} is the pure x^2 interior; build_map itself rejects it as non-monotone
    np.testing.assert_allclose(change_of_basis([1, 0, 1], b3.nodes), [0, 0, 1], atol=1e-15)
    with pytest.raises(ValueError):
        build_map([1.0, 0.0, 1.0], b3)


def test_interpolation_and_continuity():
    b = make_basis(21, 2.46)
    a = np.exp(0.3 * b.nodes) + 0.1 * b.nodes
    g = build_map(a, b)
    np.testing.assert_allclose(g(b.nodes), a, rtol=0, atol=1e-12)
    eps = 1e-9
    for edge in (-b.xi_bar, b.xi_bar):
        assert g(edge - eps) == pytest.approx(g(edge + eps), abs=1e-7)
    # linear tails interpolate the two extreme nodes
    np.testing.assert_allclose(polyval(g.alpha_minus, b.nodes[:2]), a[:2], atol=1e-12)
    np.testing.assert_allclose(polyval(g.alpha_plus, b.nodes[-2:]), a[-2:], atol=1e-12)
    g2 = build_map(a, make_basis(21, 2.46, tail_degree=2))
    np.testing.assert_allclose(polyval(g2.alpha_plus, b.nodes[-3:]), a[-3:], atol=1e-12)


def test_cvs_from_samples_constant_and_normal():
    b = make_basis(21, 2.46)
    assert np.all(cvs_from_samples(np.full(1000, 3.3), b).a == 3.3)
    x = np.random.default_rng(1).standard_normal(1_000_000)
    np.testing.assert_allclose(cvs_from_samples(x, b).a, b.nodes, atol=0.01)
    with pytest.warns(UserWarning):
        cvs_from_samples(x[:50], b)
    with pytest.raises(ValueError):
        cvs_from_samples([], b)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
@settings(max_examples=50)
def test_cvs_non_decreasing(xs):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = cvs_from_samples(xs, make_basis(21, 2.46)).a
    assert np.all(np.diff(a) >= 0)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30))
def test_isotonic_non_decreasing(xs):
    assert np.all(np.diff(isotonic(xs)) >= -1e-12)


def test_sampling_identity_ks():
    b = make_basis(21, 2.46)
    x = sample_through(build_map(b.nodes, b), 100_000, seed=3)
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_sampling_constant_map():
    b = make_basis(7, 2.0)
    assert np.all(sample_through(build_map(np.full(7, 1.5), b), 1000, seed=0) == 1.5)


def test_sampling_monotone_in_normals():
    b = make_basis(21, 2.46)
    g = build_map(np.exp(0.25 * b.nodes), b)
    z = np.sort(np.random.default_rng(0).standard_normal(10_000) * 1.5)
    assert np.all(np.diff(g(z)) >= 0)


def test_evaluate_rows_matches_single_map():
    b = make_basis(21, 2.46)
    rows = np.vstack([np.exp(s * b.nodes) for s in (0.1, 0.2, 0.3)])
    x = np.array([-3.0, 0.4, 2.9])
    out = evaluate_rows(b, rows, x)
    for j in range(3):
        assert out[j] == pytest.approx(build_map(rows[j], b)(x[j]), rel=1e-12)


def test_inverse_map():
    b = make_basis(21, 2.46)
    a = np.exp(0.1 * b.nodes)  # unit-scale law, like A(S)/S0 for a short Asian
    g = build_map(a, b)
    for k in (0, 5, 10, 20):
        assert inverse_map(g, a[k]) == pytest.approx(b.nodes[k], abs=1e-14)
    ys = np.linspace(a[0], a[-1], 200)
    np.testing.assert_allclose(g(inverse_map(g, ys)), ys, atol=1e-3)
    s = g.lower_slope
    y = a[0] - 0.1
    assert inverse_map(g, y) == pytest.approx(b.nodes[0] + (y - a[0]) / s, rel=1e-12)
    flat = build_map(np.r_[1.0, 1.0, np.linspace(1.1, 2, 19)], b)
    assert inverse_map(flat, 0.5) == -math.inf


def test_serialization_roundtrip():
    b = make_basis(21, 2.46)
    g = build_map(np.exp(0.25 * b.nodes), b)
    g2 = PiecewiseMap.from_dict(g.to_dict())
    x = np.linspace(-4, 4, 33)
    np.testing.assert_array_equal(g2(x), g(x))
    row = g.values.to_csv_row()
    np.testing.assert_array_equal(CollocationValues.from_csv_row(row).a, g.a)


def test_sc_cdf_matches_mc_set_i():
    # SC samples of A(S) vs a 10^5-path MC sample of A(S): KS distance < 0.01
    from scpricer.heston import HestonParams, SimConfig
    from scpricer.payoffs import MonitoringSchedule, sample_functionals
    p = HestonParams(0.04, 0.5, 1.0, -0.8, 0.08, 0.05)
    sched = MonitoringSchedule.lagged(1.0, 5, 1 / 12)
    ref, _ = sample_functionals(p, SimConfig(1_000_000, 1 / 120, 1.0, seed=31), sched)
    mc, _ = sample_functionals(p, SimConfig(100_000, 1 / 120, 1.0, seed=32), sched)
    b = make_basis(21)
    sc = sample_through(build_map(cvs_from_samples(ref, b), b), 100_000, seed=33)
    assert stats.ks_2samp(sc, mc).statistic < 0.01
