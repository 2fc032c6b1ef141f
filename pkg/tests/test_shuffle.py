from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TapeBuilder
from sqrtimpact.cli import ids_preserved
from sqrtimpact.errors import BinMismatch, TooFewOrders
from sqrtimpact.impact import binned_curve
from sqrtimpact.shuffle import (
    bounded_draws,
    compare_curves,
    fisher_yates,
    session_seed,
    shuffle_ids,
    splitmix64,
    synthetic_metaorders,
)
from sqrtimpact.tape import MARKET

M64 = (1 << 64) - 1


def _ref_splitmix(seed, k):
    z = (seed + (k + 1) * 0x9E3779B97F4A7C15) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def _ref_shuffle(values, seed):
    # Sequential reference: one counter per draw, rejections consume more.
    a = list(values)
    counter = 0
    pending = []
    for i in range(len(a) - 1, 0, -1):
        b = i + 1
        x = _ref_splitmix(seed, counter) >> 32
        counter += 1
        m = x * b
        pending.append((i, b, m))
    # Rejected draws are redrawn from counters after the first pass.
    for k, (i, b, m) in enumerate(pending):
        t = (2 ** 32 - b) % b
        while (m & 0xFFFFFFFF) < t:
            m = (_ref_splitmix(seed, counter) >> 32) * b
            counter += 1
        pending[k] = (i, b, m)
    for i, b, m in pending:
        j = m >> 32
        a[i], a[j] = a[j], a[i]
    return a


def test_splitmix_reference_value():
    assert int(splitmix64(0, [0])[0]) == 0xE220A8397B1DCDAF
    seeds = [0, 1, 12345, 2 ** 63 + 7]
    for s in seeds:
        got = splitmix64(s, np.arange(5))
        assert [int(v) for v in got] == [_ref_splitmix(s, k) for k in range(5)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 64 - 1), st.lists(st.integers(1, 2 ** 32 - 1),
                                              min_size=1, max_size=50))
def test_bounded_draws_in_range(seed, bounds):
    d = bounded_draws(seed, bounds)
    assert np.all(d >= 0) and np.all(d < np.array(bounds))


def test_bounded_draws_rejection_path():
    # A bound near 2**32 rejects often, exercising the redraw.
    b = [2 ** 31 + 1] * 200
    d = bounded_draws(3, b)
    assert np.all(d < b[0])
    assert len(set(d.tolist())) > 190


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from("ABCDE"), max_size=80), st.integers(0, 2 ** 64 - 1))
def test_fisher_yates_matches_reference_and_permutes(values, seed):
    out = fisher_yates(values, seed)
    assert list(out) == _ref_shuffle(values, seed)
    assert Counter(out) == Counter(values)
    assert list(fisher_yates(values, seed)) == list(out)


def test_fisher_yates_is_roughly_uniform():
    counts = Counter(tuple(fisher_yates("abc", s)) for s in range(6000))
    assert len(counts) == 6
    assert all(800 < c < 1200 for c in counts.values())


def _session():
    b = TapeBuilder()
    for k in range(30):
        b.market(1 + k, f"T{k % 4}", 1 if k % 3 else -1, [("MM", 1 + k % 5)],
                 move=1 if k % 2 else -1)
        b.limit(1.5 + k, "MM", -1)
    return b.session()


def test_shuffle_moves_only_market_order_ids():
    s = _session()
    sh = shuffle_ids(s, 9)
    a, b = s.events, sh.session.events
    m = a.event == MARKET
    assert np.array_equal(a.trader_id[~m], b.trader_id[~m])
    assert Counter(a.trader_id[m]) == Counter(b.trader_id[m])
    assert not np.array_equal(a.trader_id[m], b.trader_id[m])
    for col in ("ts", "event", "side", "price", "size", "best_bid"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    assert ids_preserved(s, 9)


def test_shuffle_is_deterministic_per_session():
    s = _session()
    a = shuffle_ids(s, 4).session.events.trader_id
    b = shuffle_ids(s, 4).session.events.trader_id
    c = shuffle_ids(s, 5).session.events.trader_id
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert session_seed(4, s) != session_seed(5, s)


def test_shuffle_too_few_orders():
    b = TapeBuilder()
    b.market(1, "A", 1, [("MM", 1)])
    s = b.session()
    with pytest.raises(TooFewOrders):
        shuffle_ids(s, 0)
    ms, skipped = synthetic_metaorders([s, _session()], 0)
    assert skipped == 1 and ms.N.sum() == 30


def test_synthetic_flow_is_conserved(small_sim):
    ss = small_sim[3][:2]
    ms, skipped = synthetic_metaorders(ss, 1)
    assert skipped == 0
    assert ms.Q.sum() == sum(s.V_D for s in ss)


def _curve(seed, shift=0.0):
    rng = np.random.default_rng(seed)
    x = 10 ** rng.uniform(-4, -1, 4000)
    y = np.sqrt(x) * (1 + shift) + rng.normal(0, 0.01, x.size)
    return binned_curve(x, y, np.geomspace(1e-4, 1e-1, 7), 30)


def test_compare_identical_curves():
    c = _curve(0)
    cmp = compare_curves(c, c)
    assert cmp.chi2 == 0 and cmp.dof == 6 and cmp.p_value == 1.0


def test_compare_detects_shift():
    assert compare_curves(_curve(0), _curve(1)).p_value > 1e-4
    assert compare_curves(_curve(0), _curve(1, shift=0.5)).p_value < 1e-6


def test_compare_bin_mismatch():
    rng = np.random.default_rng(0)
    x = 10 ** rng.uniform(-4, -1, 1000)
    other = binned_curve(x, np.sqrt(x), np.geomspace(1e-4, 1e-1, 5), 10)
    with pytest.raises(BinMismatch):
        compare_curves(_curve(0), other)
