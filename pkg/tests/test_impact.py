import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqrtimpact.errors import (
    InsufficientData,
    InsufficientRanks,
    NonPositiveMean,
    TooFewTailSamples,
)
from sqrtimpact.impact import (
    binned_curve,
    child_impact_profile,
    fit_child_curve,
    fit_power_curve,
    fit_sqrt_law,
    fit_tail_exponent,
    metaorder_impact_curve,
    read_curve,
    refit_i0_zero,
    single_mo_impact,
    write_curve,
)
from sqrtimpact.metaorder import reconstruct_all
from sqrtimpact.simulator import preset_single_mo, simulate
from sqrtimpact.tape import seasonality_profile, split_sessions


# -- power laws --------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 100), st.floats(-2, 2), st.integers(2, 20))
def test_power_fit_exact_on_noiseless_data(a, b, n):
    x = np.geomspace(1e-5, 1e-1, n)
    for se in (None, 0.05 * a * x ** b):
        fit = fit_power_curve(x, a * x ** b, se)
        assert fit.prefactor == pytest.approx(a, rel=1e-8)
        assert fit.exponent == pytest.approx(b, abs=1e-8)


def test_power_fit_weighted_covariance_is_absolute():
    x = np.geomspace(1e-4, 1e-1, 6)
    se = np.full(6, 0.01)
    fit = fit_power_curve(x, x ** 0.5, se)
    # Log-space errors se/y; covariance is (X' W X)^-1 with W = (y/se)**2.
    X = np.column_stack([np.ones(6), np.log(x)])
    W = (x ** 0.5 / se) ** 2
    np.testing.assert_allclose(fit.cov, np.linalg.inv((X.T * W) @ X), rtol=1e-8)
    assert fit.chi2 == pytest.approx(0.0, abs=1e-20)


def test_power_fit_errors():
    with pytest.raises(InsufficientData):
        fit_power_curve([1.0], [1.0])
    with pytest.raises(NonPositiveMean):
        fit_power_curve([1.0, 2.0, 3.0], [1.0, -1.0, -2.0])


def test_sqrt_law_fit():
    x = np.geomspace(1e-5, 1e-2, 7)
    fit = fit_sqrt_law(x, 0.8 * np.sqrt(x), np.full(7, 0.01))
    assert fit.Y == pytest.approx(0.8) and fit.chi2 == pytest.approx(0, abs=1e-20)
    # Weighted least squares closed form.
    y = 0.8 * np.sqrt(x) * (1 + 0.1 * np.sin(np.arange(7)))
    w = 1 / np.linspace(0.01, 0.02, 7) ** 2
    expect = np.sum(w * np.sqrt(x) * y) / np.sum(w * x)
    assert fit_sqrt_law(x, y, np.linspace(0.01, 0.02, 7)).Y == pytest.approx(expect)


# -- binning -----------------------------------------------------------------

def test_binned_curve_statistics():
    rng = np.random.default_rng(0)
    x = 10 ** rng.uniform(-4, -1, 20_000)
    y = 0.7 * np.sqrt(x) + rng.normal(0, 0.001, x.size)
    edges = np.geomspace(1e-4, 1e-1, 7)
    c = binned_curve(x, y, edges, min_bin_count=30)
    assert c.count.sum() == x.size
    k = np.searchsorted(edges, x, side="right") - 1
    np.testing.assert_allclose(c.mean, [y[k == j].mean() for j in range(6)])
    np.testing.assert_allclose(
        c.se, [y[k == j].std(ddof=1) / np.sqrt((k == j).sum()) for j in range(6)])
    assert c.fit.exponent == pytest.approx(0.5, abs=0.01)
    assert c.sqrt_fit.Y == pytest.approx(0.7, rel=0.02)


def test_binned_curve_needs_two_bins():
    with pytest.raises(InsufficientData):
        binned_curve([1e-3] * 100, [1.0] * 100, min_bin_count=10)
    with pytest.raises(ValueError):
        binned_curve([1e-3], [1.0], edges=[1.0, 0.5])


def test_curve_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    x = 10 ** rng.uniform(-4, -1, 5000)
    c = binned_curve(x, np.sqrt(x), np.geomspace(1e-4, 1e-1, 7), 10)
    write_curve(c, tmp_path / "c.csv", tmp_path / "c.json")
    back = read_curve(tmp_path / "c.csv")
    np.testing.assert_allclose(back.mean, c.mean)
    np.testing.assert_array_equal(back.count, c.count)


def test_metaorder_curve_on_simulation(small_sim):
    ms = reconstruct_all(small_sim[3])
    c = metaorder_impact_curve(ms, min_bin_count=20)
    assert 0.3 < c.fit.exponent < 0.7
    assert c.t_trend is not None and c.t_trend.se > 0
    d = c.fit_dict()
    assert {"fit", "sqrt_law", "t_trend"} <= set(d)


# -- child profile -----------------------------------------------------------

def test_child_fit_noiseless_inversion():
    i = np.arange(1, 51)
    fit = fit_child_curve(i, 2 * (np.sqrt(i + 4) - 2))
    assert fit.i0 == pytest.approx(4, abs=1e-6)
    assert fit.beta == pytest.approx(0.5, abs=1e-6)
    assert fit.A == pytest.approx(2, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3), st.floats(1, 12), st.floats(0.3, 0.7))
def test_child_fit_recovers_parameters(A, i0, beta):
    i = np.arange(1, 51)
    g = 1 - beta
    fit = fit_child_curve(i, A * ((i + i0) ** g - i0 ** g))
    assert fit.i0 == pytest.approx(i0, rel=1e-4)
    assert fit.beta == pytest.approx(beta, rel=1e-4)


def test_child_fit_pinned_parameters():
    i = np.arange(1, 51)
    J = 2 * (np.sqrt(i + 4) - 2)
    pinned = fit_child_curve(i, J, beta=0.5)
    assert pinned.free == ("A", "i0") and pinned.se("beta") == 0.0
    assert pinned.i0 == pytest.approx(4, abs=1e-6)


def test_i0_zero_refit_mimics_steeper_power():
    i = np.arange(1, 51)
    fit = fit_child_curve(i, 2 * (np.sqrt(i + 4) - 2))
    zero = refit_i0_zero(fit)
    assert zero.i0 == 0.0
    assert 0.65 <= 1 - zero.beta <= 0.75


def test_child_profile_on_simulation(small_sim):
    ms = reconstruct_all(small_sim[3])
    prof = child_impact_profile(ms, min_count=20)
    assert prof.count[0] >= prof.count[-1]
    assert prof.fit is not None and prof.fit_i0_zero.i0 == 0.0
    assert prof.mean_spacing_s > 0 and prof.scale > 0
    with pytest.raises(InsufficientRanks):
        child_impact_profile(ms, min_count=10**9)
    with pytest.raises(ValueError):
        child_impact_profile(ms, last="bogus")


# -- single market orders ----------------------------------------------------

def test_single_mo_zero_immediate_has_no_lag0_move():
    cfg = preset_single_mo(seed=2, n_sessions=4)
    ss = split_sessions(simulate(cfg)[0], cfg.stock_id)
    res = single_mo_impact(ss, seasonality_profile(ss), min_bin_count=20)
    assert res.lag0_no_immediate.size > 0
    assert np.all(res.lag0_no_immediate == 0)
    assert res.n_orders > 0 and res.n_truncated >= 0
    assert res.all_orders.fit.exponent > 0


# -- tails -------------------------------------------------------------------

def _score(alpha, x_min, mean_log, k_max=2_000_000):
    # Model mean of log k minus the sample mean: zero at the MLE.
    k = np.arange(x_min, k_max, dtype=float)
    p = k ** -alpha
    return np.sum(np.log(k) * p) / np.sum(p) - mean_log


def test_tail_mle_solves_score_equation():
    rng = np.random.default_rng(5)
    x = rng.zipf(2.5, 20_000)
    fit = fit_tail_exponent(x, x_min=3)
    tail = x[x >= 3]
    assert abs(_score(fit.exponent, 3, np.log(tail).mean())) < 1e-4
    assert fit.n_tail == tail.size


@pytest.mark.parametrize("mu", [1.6, 2.0, 2.4])
def test_tail_fit_on_zipf(mu):
    x = np.random.default_rng(7).zipf(mu, 100_000)
    fit = fit_tail_exponent(x)
    assert fit.exponent == pytest.approx(mu, abs=0.05)
    assert 0 <= fit.ks < 0.05


def test_tail_fit_too_few():
    with pytest.raises(TooFewTailSamples):
        fit_tail_exponent([1, 2, 3])
