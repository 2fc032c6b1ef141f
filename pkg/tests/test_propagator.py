import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqrtimpact.errors import FitUnavailable, UnsupportedBeta
from sqrtimpact.impact import ChildFit, ChildProfile
from sqrtimpact.propagator import (
    PropagatorParams,
    bracket,
    calibrate,
    closed_form_partial_impact,
    discrete_sum_impact,
    general_partial_impact,
    kernel,
    total_impact_prediction,
    uniform_discrete_sum,
)


def _loop_sum(i, i0, beta=0.5):
    return math.fsum((k + i0) ** -beta for k in range(i))


def test_uniform_discrete_sum_matches_loop():
    i = np.array([1, 2, 7, 50, 333])
    got = uniform_discrete_sum(i, 4.0)
    np.testing.assert_allclose(got, [_loop_sum(k, 4.0) for k in i], rtol=1e-12)
    assert uniform_discrete_sum([0], 4.0)[0] == 0.0


def test_discrete_sum_impact_uniform_equals_uniform_sum():
    p = PropagatorParams.from_i0(G0=0.7, i0=4.0, dt=2.5)
    n = 40
    t = np.arange(n) * p.dt
    # Evaluated at the last child, lags run 0..n-1 spacings.
    got = discrete_sum_impact(9.0, t, t[-1], p)
    assert got == pytest.approx(0.7 * 3.0 * _loop_sum(n, 4.0), rel=1e-12)
    # Children after t_eval do not contribute.
    assert discrete_sum_impact(9.0, t, t[9], p) == pytest.approx(
        0.7 * 3.0 * _loop_sum(10, 4.0), rel=1e-12)
    with pytest.raises(ValueError):
        discrete_sum_impact(1.0, [0.0, 0.0], 1.0, p)


def test_kernel_is_sqrt_in_size_not_linear():
    p = PropagatorParams()
    one = discrete_sum_impact([1.0], [0.0], 3.0, p)
    four = discrete_sum_impact([4.0], [0.0], 3.0, p)
    assert four == pytest.approx(2 * one)
    assert kernel(0.0, p) == pytest.approx((1 / 4) ** 0.5)


def test_closed_form_within_five_percent_and_gap_shrinks():
    i = np.arange(10, 1001)
    p = PropagatorParams.from_i0(1.0, 4.0)
    gap = np.abs(uniform_discrete_sum(i, 4.0) / closed_form_partial_impact(1.0, i, p) - 1)
    assert gap.max() < 0.05
    assert np.all(np.diff(gap) < 0)


def test_closed_form_rejects_other_beta():
    with pytest.raises(UnsupportedBeta):
        closed_form_partial_impact(1.0, 5, PropagatorParams(beta=0.4))


def test_general_form_reduces_to_closed_form():
    p = PropagatorParams.from_i0(1.3, 2.0)
    i = np.arange(1, 100)
    np.testing.assert_allclose(general_partial_impact(4.0, i, p),
                               closed_form_partial_impact(4.0, i, p))


def test_bracket_values():
    assert bracket(2, 4) == pytest.approx(math.sqrt(3) - math.sqrt(2), abs=1e-15)
    assert round(float(bracket(2, 4)), 4) == 0.3178
    assert bracket(5, 0) == 1.0


@pytest.mark.parametrize("N", [1e4, 1e6, 1e8, 1e12])
def test_bracket_approaches_one_like_inverse_sqrt_n(N):
    # 1 - bracket = sqrt(x) - x/2 + O(x**2) with x = i0/N.
    x = 4.0 / N
    assert 1 - bracket(N, 4.0) == pytest.approx(math.sqrt(x) - x / 2, rel=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 100), st.integers(1, 10_000))
def test_bracket_bounded_and_increasing(i0, N):
    b, b2 = bracket(N, i0), bracket(N + 1, i0)
    assert 0 < b < 1
    assert b2 > b


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 1e6), st.integers(1, 2000), st.floats(0.1, 20),
       st.floats(0.01, 10))
def test_total_impact_is_bracket_times_sqrt_q(Q, N, i0, G0):
    p = PropagatorParams.from_i0(G0, i0)
    got = total_impact_prediction(Q, N, p)
    assert got == pytest.approx(2 * G0 * math.sqrt(Q) * bracket(N, i0), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 20), st.floats(0.2, 0.8), st.integers(1, 300))
def test_continuum_brackets_discrete_sum(i0, beta, i):
    # The decreasing summand puts the sum between the integrals from 0 and 1.
    p = PropagatorParams.from_i0(1.0, i0, beta)
    s = uniform_discrete_sum([i], i0, beta)[0]
    lo = general_partial_impact(1.0, i, p)
    hi = lo + i0 ** -beta - (i + i0) ** -beta
    assert lo <= s * (1 + 1e-12) and s <= hi * (1 + 1e-12)


def test_params_validation_and_json():
    p = PropagatorParams(0.3, 8.0, 0.45, 2.0)
    assert p.i0 == 4.0
    assert PropagatorParams.from_json(p.to_json()) == p
    for bad in (dict(G0=0), dict(s0=-1), dict(beta=1.0), dict(dt=0)):
        with pytest.raises(ValueError):
            PropagatorParams(**bad)


def _profile(A=2.0, i0=4.0, beta=0.5, spacing=12.0, mean=None):
    rank = np.arange(1, 51)
    fit = ChildFit(A=A, i0=i0, beta=beta, cov=np.zeros((3, 3)), cost=0.0)
    if mean is None:
        mean = fit(rank)
    return ChildProfile(rank=rank, mean=mean, se=np.full(50, 0.01),
                        count=np.full(50, 1000), i_max=50, min_count=30,
                        scale=2.0, mean_spacing_s=spacing, fit=fit)


def test_calibrate_closed_form():
    p = calibrate(_profile())
    assert p.G0 == pytest.approx(1.0)
    assert p.s0 == pytest.approx(48.0) and p.dt == 12.0 and p.beta == 0.5
    assert calibrate(_profile(), units="physical").G0 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        calibrate(_profile(), method="nope")


def test_calibrate_discrete_sum_recovers_exact_sum():
    rank = np.arange(1, 51)
    # Lags 1..i spacings: sum_{m=1..i} (m + i0)**-beta.
    mean = 0.8 * np.array([_loop_sum(k + 1, 4.0) - 4.0 ** -0.5 for k in rank])
    p = calibrate(_profile(mean=mean), method="discrete_sum")
    assert p.G0 == pytest.approx(0.8, rel=1e-4)
    assert p.i0 == pytest.approx(4.0, rel=1e-3)
    assert p.beta == pytest.approx(0.5, rel=1e-4)


def test_calibrate_without_fit():
    prof = _profile()
    prof.fit = None
    with pytest.raises(FitUnavailable):
        calibrate(prof)
