import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TapeBuilder
from sqrtimpact.ecology import (
    class_summary,
    classify_session,
    classify_sessions,
    histogram_mode,
    inventory_series,
    market_maker_ratio,
    participation_histograms,
    reversal_time,
)


def test_reversal_time():
    assert reversal_time([0, 10, 30, 60], [1, -1, -1, 1]) == pytest.approx(20)
    assert np.isnan(reversal_time([0, 5], [1, 1]))
    assert np.isnan(reversal_time([3], [1]))


def _session():
    b = TapeBuilder()
    b.limit(0.5, "MM", -1, size=100)
    b.limit(0.6, "MM", 1, size=100)
    # F alternates every 10 s; S only buys.
    for k in range(10):
        b.market(1 + 10 * k, "F", 1 if k % 2 == 0 else -1, [("MM", 2)])
        b.market(5 + 10 * k, "S", 1, [("MM", 3)])
    return b.session()


def test_classify_fast_and_slow():
    eco = classify_session(_session())
    t = eco.traders
    assert t.loc["F", "tau_s"] == pytest.approx(10)
    assert bool(t.loc["F", "fast"]) and not bool(t.loc["S", "fast"])
    # MM posts a sell then a buy limit: one reversal 0.1 s apart.
    assert bool(t.loc["MM", "fast"])
    assert eco.V_D == 50 and eco.V_fast == 20 and eco.V_slow == 30
    assert eco.volume_against_fast == 50
    assert eco.N_D == 3 and eco.N_fast == 2
    assert t.loc["MM", "passive_volume"] == 50
    assert t.loc["S", "max_abs_inventory"] == 30


def test_market_only_mode_ignores_limit_reversals():
    eco = classify_session(_session(), market_only=True)
    assert not bool(eco.traders.loc["MM", "fast"])


def test_inventory_series_and_ratio():
    s = _session()
    inv = inventory_series("F", s)["inventory"].to_numpy()
    assert list(inv[:4]) == [2, 0, 2, 0]
    assert market_maker_ratio("F", s) == pytest.approx(2 / 20)
    assert market_maker_ratio("S", s) == pytest.approx(1.0)
    assert np.isnan(market_maker_ratio("nobody", s))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["A", "B", "C"]), st.sampled_from([1, -1]),
                          st.sampled_from(["M1", "M2"]), st.integers(1, 9),
                          st.floats(0.1, 190)),
                min_size=1, max_size=40))
def test_volume_split_is_exact(orders):
    b = TapeBuilder()
    t = 0.0
    for trader, side, maker, q, dt in orders:
        t += dt
        b.market(t, trader, side, [(maker, q)])
    eco = classify_session(b.session())
    assert eco.V_fast + eco.V_slow == eco.V_D == sum(o[3] for o in orders)
    assert 0 <= eco.N_fast <= eco.N_D
    # A fast trader's flips average under the session length.
    for tid, row in eco.traders.iterrows():
        if row["fast"]:
            assert row["tau_s"] < eco.length_s


def test_cross_session_pools_flips():
    a = TapeBuilder()
    a.market(1, "X", 1, [("MM", 1)])
    a.market(101, "X", -1, [("MM", 1)])
    b = TapeBuilder(half="PM")
    b.market(1, "X", 1, [("MM", 1)])
    b.market(301, "X", -1, [("MM", 1)])
    r = classify_sessions([a.session(), b.session()], cross_session=True)
    assert r[0].traders.loc["X", "tau_s"] == pytest.approx(200)
    assert r[1].traders.loc["X", "tau_s"] == pytest.approx(200)
    r = classify_sessions([a.session(), b.session()])
    assert r[0].traders.loc["X", "tau_s"] == pytest.approx(100)


def test_classification_matches_labels(small_sim):
    _, _, ledger, sessions = small_sim
    agents = ledger.agents
    res = classify_sessions(sessions)
    checked = 0
    for s, eco in zip(sessions, res):
        lab = agents[agents["session"] == s.label].set_index("trader_id")
        got = eco.traders.join(lab[["fast", "tau_s"]], rsuffix="_true",
                               how="inner")
        far = (np.abs(got["tau_s"] - s.length_s) >= 0.1 * s.length_s) | \
            got["tau_s"].isna()
        assert (got["fast"][far] == got["fast_true"][far]).all()
        checked += int(far.sum())
    assert checked > 50


def test_histograms_and_summary(small_sim):
    res = classify_sessions(small_sim[3])
    h = participation_histograms(res)
    assert h["fast_volume_share"].sum() == len(res)
    lo, hi = histogram_mode(h, "fast_volume_share")
    assert hi - lo == pytest.approx(0.05)
    cs = class_summary(res, k_min=1)
    assert set(cs["class"]) == {"fast", "slow"}
    assert isinstance(cs, pd.DataFrame)
    total = sum(r.V_D for r in res)
    assert cs["aggressive_volume"].sum() == total
