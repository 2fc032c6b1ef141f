import io
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DAY, TapeBuilder, ts_at
from sqrtimpact.errors import MalformedRow, NonMonotoneTimestamp, UnknownEventKind
from sqrtimpact.tape import (
    BINARY_MAGIC,
    HEADER,
    MISSING,
    OrderEvent,
    ParseReport,
    StockMeta,
    Tape,
    format_csv,
    market_orders,
    parse_tape,
    read_meta,
    read_tape,
    seasonality_from_frame,
    seasonality_frame,
    seasonality_profile,
    session_window,
    split_sessions,
    write_meta,
    write_tape,
)


def _csv(rows):
    return HEADER + "".join(r + "\n" for r in rows).encode()


GOOD = "1704358200000000000,o1,T1,L,1,100,5,99,101,10,10"


# -- parsing -----------------------------------------------------------------

def test_csv_and_binary_round_trip(small_sim, tmp_path):
    tape = small_sim[1][:50_000]
    for fmt in ("csv", "binary"):
        path = tmp_path / f"t.{fmt}"
        assert write_tape(tape, path, fmt) == len(tape)
        assert read_tape(path) == tape


def test_csv_format_is_canonical(small_sim):
    tape = small_sim[1][:5_000]
    text = format_csv(tape, header=True)
    assert format_csv(read_tape(io.BytesIO(text)), header=True) == text


def test_streaming_chunks_match_whole_read(small_sim, tmp_path):
    tape = small_sim[1][:20_000]
    path = tmp_path / "t.csv"
    write_tape(tape, path)
    batches = list(parse_tape(path, chunk_bytes=4096))
    assert len(batches) > 10
    assert Tape.concat(batches) == tape


def test_missing_quotes_parse_as_missing():
    t = read_tape(io.BytesIO(_csv(["1704358200000000000,o1,T1,C,1,100,0,,,,"])))
    assert t.best_bid[0] == MISSING and not t.has_quotes()[0]
    assert t[0].best_bid is None


@pytest.mark.parametrize("row, exc", [
    ("1704358200000000000,o2,T1,L,1,100,5,99,101,10", MalformedRow),
    ("1704358200000000000,o2,T1,Z,1,100,5,99,101,10,10", UnknownEventKind),
    ("1704358100000000000,o2,T1,L,1,100,5,99,101,10,10", NonMonotoneTimestamp),
    ("1704358200000000000,o2,T1,L,2,100,5,99,101,10,10", MalformedRow),
    ("1704358200000000000,o2,T1,L,1,abc,5,99,101,10,10", MalformedRow),
    ("1704358200000000000,o2,T1,L,1,100,0,99,101,10,10", MalformedRow),
    ("1704358200000000000,o2,T1,L,1,100,5,101,99,10,10", MalformedRow),
])
def test_bad_rows_report_line_number(row, exc):
    data = _csv([GOOD, GOOD.replace("o1", "o9"), row])
    with pytest.raises(exc) as info:
        read_tape(io.BytesIO(data))
    assert info.value.line == 4


def test_bad_header():
    with pytest.raises(MalformedRow) as info:
        read_tape(io.BytesIO(b"a,b,c\n" + GOOD.encode() + b"\n"))
    assert info.value.line == 1


def test_skip_mode_drops_and_reports():
    rows = [GOOD,
            "1704358200000000000,o2,T1,L,2,100,5,99,101,10,10",
            "1704358100000000000,o3,T1,L,1,100,5,99,101,10,10",
            "1704358300000000000,o4,T1,L,1,100,5,99,101,10,10"]
    rep = ParseReport()
    t = read_tape(io.BytesIO(_csv(rows)), on_error="skip", report=rep)
    assert list(t.order_id) == ["o1", "o4"]
    assert [line for line, _ in rep.dropped] == [3, 4]


def test_binary_magic_detected(tmp_path):
    t = TapeBuilder()
    t.limit(1, "A", 1)
    path = tmp_path / "x.bin"
    write_tape(t.tape(), path, "binary")
    assert path.read_bytes().startswith(BINARY_MAGIC)
    assert read_tape(path) == t.tape()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**6), st.sampled_from("LMCX"),
                          st.sampled_from([1, -1]), st.integers(1, 10**6),
                          st.integers(1, 500), st.booleans(),
                          st.text("abcXYZ019_", min_size=1, max_size=6)),
                min_size=1, max_size=40))
def test_round_trip_property(rows):
    ts = np.cumsum([r[0] for r in rows]) + 1_704_358_200_000_000_000
    n = len(rows)
    quotes = np.array([[r[3], r[3] + 1, 5, 7] if r[5] else [MISSING] * 4
                       for r in rows], dtype=np.int64)
    tape = Tape(ts, [f"o{k}" for k in range(n)], [r[6] for r in rows],
                ["LMCX".index(r[1]) for r in rows], [r[2] for r in rows],
                [r[3] for r in rows], [r[4] for r in rows], *quotes.T)
    for fmt in ("csv", "binary"):
        buf = io.BytesIO()
        write_tape(tape, buf, fmt)
        buf.seek(0)
        assert read_tape(buf) == tape


# -- sessions ----------------------------------------------------------------

def _limit_at(ts, oid):
    return OrderEvent(ts, oid, "A", "L", 1, 1000, 1, 1000, 1002, 5, 5)


def test_session_split_trims_and_halves():
    start_am, end_am = session_window(DAY, "AM")
    start_pm, _ = session_window(DAY, "PM")
    raw = [start_am - 5 * 60 * 10**9, start_am, end_am - 1, end_am,
           start_pm + 10**9]
    tape = Tape.from_events([_limit_at(t, f"r{k}") for k, t in enumerate(raw)])
    ss = split_sessions(tape, "S")
    assert [s.half for s in ss] == ["AM", "PM"]
    assert list(ss[0].events.order_id) == ["r1", "r2"]
    assert list(ss[1].events.order_id) == ["r4"]
    assert ss[0].length_s == pytest.approx(130 * 60)
    assert all(s.stock_id == "S" for s in ss)


def test_empty_trimmed_session_is_flagged():
    start, _ = session_window(DAY, "AM")
    (s,) = split_sessions(Tape.from_events([_limit_at(start - 60 * 10**9, "o")]))
    assert "empty" in s.flags and s.V_D == 0 and len(s.events) == 0


def test_session_stats_and_market_orders(builder):
    builder.limit(1, "MM", -1)
    builder.market(10, "T1", 1, [("MM", 3), ("MM", 4)], move=2)
    builder.market(20, "T2", -1, [("MM", 5)], move=-4)
    builder.limit(30, "MM", 1)
    s = builder.session()
    assert s.V_D == 12
    mids = np.array([1001, 1003, 999])
    assert s.sigma_D == pytest.approx((mids.max() - mids.min()) / mids[0])
    mo = market_orders(s.events)
    assert list(mo.q) == [7, 5]
    assert list(mo.sign) == [1, -1]
    assert list(mo.n_fills) == [2, 1]
    assert mo.log_mid_before[0] == pytest.approx(math.log(1001))
    assert mo.log_mid_after[0] == pytest.approx(math.log(1003))
    assert list(mo.opposite_size) == [50, 50]
    assert mo.ts[0] == ts_at(10)


def test_unfilled_market_order_is_ignored(builder):
    builder.market(5, "T1", 1, [])
    builder.market(6, "T1", 1, [("MM", 2)])
    mo = market_orders(builder.tape())
    assert len(mo) == 1 and mo.q[0] == 2


# -- metadata and seasonality ---------------------------------------------------

def test_meta_round_trip(tmp_path):
    m = StockMeta("XYZ", 0.01, DAY, {"venue": "A"})
    write_meta(m, tmp_path / "t.meta")
    assert read_meta(tmp_path / "t.meta") == m


def test_seasonality_profile_and_frame_round_trip(small_sim):
    ss = small_sim[3]
    prof = seasonality_profile(ss)
    assert prof.n_bins("AM") == 9 and prof.n_bins("PM") == 9
    # Volume per bin sums to the mean session volume.
    for h in ("AM", "PM"):
        vd = np.mean([s.V_D for s in ss if s.half == h])
        assert prof.V_b[h].sum() == pytest.approx(vd)
    back = seasonality_from_frame(seasonality_frame(prof))
    for h in ("AM", "PM"):
        np.testing.assert_array_equal(back.sigma_b[h], prof.sigma_b[h])
        np.testing.assert_array_equal(back.V_b[h], prof.V_b[h])
        np.testing.assert_array_equal(back.flags[h], prof.flags[h])
    s = ss[0]
    sig, vb = back.lookup(s, s.events.ts[:3])
    assert np.all(vb == prof.V_b[s.half][0])


def test_seasonality_frame_is_tidy(small_sim):
    df = seasonality_frame(seasonality_profile(small_sim[3]))
    assert isinstance(df, pd.DataFrame)
    assert set(df["half"]) == {"AM", "PM"}
    assert (df["bin_minutes"] == 15).all()
