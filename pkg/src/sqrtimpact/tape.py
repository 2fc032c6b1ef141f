"""ID-tagged order-flow tapes: parsing, serialization, sessions.

A tape is a time-ordered table of order events for one stock.  Events are
held column-wise in a :class:`Tape` (one numpy array per field) so that
tapes with tens of millions of rows stay cheap; :class:`OrderEvent` is the
row view.

CSV format (UTF-8, ``\\n`` line endings, header row)::

    ts_ns,order_id,trader_id,event,side,price_ticks,size,best_bid,best_ask,bid_size,ask_size

``ts_ns``
    integer nanoseconds since 1970-01-01T00:00 in exchange-local wall-clock
    time (no time zone; the date and time of day are read off directly).
``event``
    ``L`` limit submission, ``M`` market submission, ``C`` cancel,
    ``X`` execution fill.
``side``
    ``1`` buy, ``-1`` sell.  For ``X`` rows it is the side of the resting
    limit order that was filled.
``best_bid`` .. ``ask_size``
    best-quote snapshot, empty when unknown.

Fill linkage: the fills of a market order are the ``X`` rows that directly
follow its ``M`` row.  ``X.order_id`` / ``X.trader_id`` identify the resting
limit order and its owner; the aggressor is the owner of the preceding ``M``
row.  ``M`` rows carry the quotes just before the order, ``X`` rows the
quotes just after the fill.

Binary variant (little endian): the 8-byte magic ``b"SQTAPE1\\n"`` followed
by blocks ``u32 payload_len | payload``, where the payload is ``u32 n`` and
then the columns ``ts:i8[n] side:i1[n] event:u1[n] price:i8[n] size:i8[n]
best_bid:i8[n] best_ask:i8[n] bid_size:i8[n] ask_size:i8[n]`` followed by two
string blocks ``u32 nbytes | utf-8`` holding the order ids and trader ids
joined by ``\\n``.  Missing quote fields are ``INT64_MIN``.  Event codes are
0..3 for L, M, C, X.
"""

from __future__ import annotations

import datetime as _dt
import io
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    MalformedRow,
    NonMonotoneTimestamp,
    NoQuotes,
    OutOfSession,
    UnknownEventKind,
)

COLUMNS = (
    "ts_ns", "order_id", "trader_id", "event", "side", "price_ticks",
    "size", "best_bid", "best_ask", "bid_size", "ask_size",
)
HEADER = ",".join(COLUMNS).encode() + b"\n"
EVENT_LETTERS = ("L", "M", "C", "X")
EVENT_KINDS = ("submit_limit", "submit_market", "cancel", "execute")
LIMIT, MARKET, CANCEL, EXECUTE = 0, 1, 2, 3
MISSING = np.iinfo(np.int64).min
BINARY_MAGIC = b"SQTAPE1\n"

SECOND_NS = 1_000_000_000
MINUTE_NS = 60 * SECOND_NS
DAY_NS = 86_400 * SECOND_NS
TRIM_NS = 10 * MINUTE_NS
# Raw continuous-auction windows, minutes after midnight.
RAW_WINDOWS = {"AM": (9 * 60, 11 * 60 + 30), "PM": (12 * 60 + 30, 15 * 60)}

_INT_FIELDS = ("ts", "side", "event", "price", "size",
               "best_bid", "best_ask", "bid_size", "ask_size")
_ALL_FIELDS = ("ts", "order_id", "trader_id", "event", "side", "price",
               "size", "best_bid", "best_ask", "bid_size", "ask_size")


@dataclass(frozen=True, slots=True)
class OrderEvent:
    timestamp: int
    order_id: str
    trader_id: str
    event_kind: str
    side: int
    price: int
    size: int
    best_bid: int | None = None
    best_ask: int | None = None
    bid_size: int | None = None
    ask_size: int | None = None


class Tape:
    """Column store of order events.

    Indexing with an integer returns an :class:`OrderEvent`; indexing with a
    slice, boolean mask or index array returns a new :class:`Tape`.
    """

    __slots__ = _ALL_FIELDS

    def __init__(self, ts, order_id, trader_id, event, side, price, size,
                 best_bid=None, best_ask=None, bid_size=None, ask_size=None):
        n = len(ts)
        self.ts = np.asarray(ts, dtype=np.int64)
        self.order_id = _as_object(order_id)
        self.trader_id = _as_object(trader_id)
        self.event = np.asarray(event, dtype=np.uint8)
        self.side = np.asarray(side, dtype=np.int8)
        self.price = np.asarray(price, dtype=np.int64)
        self.size = np.asarray(size, dtype=np.int64)
        for name, col in (("best_bid", best_bid), ("best_ask", best_ask),
                          ("bid_size", bid_size), ("ask_size", ask_size)):
            if col is None:
                col = np.full(n, MISSING, dtype=np.int64)
            setattr(self, name, np.asarray(col, dtype=np.int64))

    @classmethod
    def empty(cls) -> "Tape":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, [], [], z, z, z, z)

    @classmethod
    def from_events(cls, events: Iterable[OrderEvent]) -> "Tape":
        events = list(events)
        if not events:
            return cls.empty()

        def opt(v):
            return MISSING if v is None else v

        kinds = {k: i for i, k in enumerate(EVENT_KINDS)}
        kinds.update({k: i for i, k in enumerate(EVENT_LETTERS)})
        return cls(
            [e.timestamp for e in events],
            [e.order_id for e in events],
            [e.trader_id for e in events],
            [kinds[e.event_kind] for e in events],
            [e.side for e in events],
            [e.price for e in events],
            [e.size for e in events],
            [opt(e.best_bid) for e in events],
            [opt(e.best_ask) for e in events],
            [opt(e.bid_size) for e in events],
            [opt(e.ask_size) for e in events],
        )

    @classmethod
    def concat(cls, tapes: Sequence["Tape"]) -> "Tape":
        tapes = [t for t in tapes if len(t)]
        if not tapes:
            return cls.empty()
        if len(tapes) == 1:
            return tapes[0]
        return cls(*(np.concatenate([getattr(t, f) for t in tapes])
                     for f in _ALL_FIELDS))

    def __len__(self) -> int:
        return len(self.ts)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            return self._row(int(key))
        return Tape(*(getattr(self, f)[key] for f in _ALL_FIELDS))

    def __iter__(self) -> Iterator[OrderEvent]:
        for i in range(len(self)):
            yield self._row(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tape) or len(self) != len(other):
            return False
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in _ALL_FIELDS)

    def __repr__(self) -> str:
        return f"Tape({len(self)} events)"

    def _row(self, i: int) -> OrderEvent:
        def opt(v):
            v = int(v)
            return None if v == MISSING else v

        return OrderEvent(
            int(self.ts[i]), self.order_id[i], self.trader_id[i],
            EVENT_KINDS[self.event[i]], int(self.side[i]), int(self.price[i]),
            int(self.size[i]), opt(self.best_bid[i]), opt(self.best_ask[i]),
            opt(self.bid_size[i]), opt(self.ask_size[i]),
        )

    def has_quotes(self) -> np.ndarray:
        return (self.best_bid != MISSING) & (self.best_ask != MISSING)

    def mid(self) -> np.ndarray:
        """Mid-price in ticks; NaN where either quote is missing."""
        ok = self.has_quotes()
        out = np.full(len(self), np.nan)
        out[ok] = 0.5 * (self.best_bid[ok] + self.best_ask[ok])
        return out

    def log_mid(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(self.mid())

    def copy(self) -> "Tape":
        return Tape(*(getattr(self, f).copy() for f in _ALL_FIELDS))

    def replace(self, **columns) -> "Tape":
        cols = {f: getattr(self, f) for f in _ALL_FIELDS}
        cols.update(columns)
        return Tape(*(cols[f] for f in _ALL_FIELDS))


def _as_object(values) -> np.ndarray:
    if isinstance(values, np.ndarray) and values.dtype == object:
        return values
    out = np.empty(len(values), dtype=object)
    out[:] = list(values) if not isinstance(values, np.ndarray) else values
    return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

@dataclass
class ParseReport:
    """Rows dropped by a non-strict parse, as ``(line, reason)`` pairs."""
    n_rows: int = 0
    dropped: list = field(default_factory=list)


def parse_tape(source, *, chunk_bytes: int = 1 << 25, on_error: str = "raise",
               report: ParseReport | None = None) -> Iterator[Tape]:
    """Stream a tape file as a sequence of :class:`Tape` batches.

    ``source`` is a path or a binary file object, CSV or binary format
    (detected from the first bytes).  Memory use is bounded by
    ``chunk_bytes`` whatever the file size.  With ``on_error="raise"`` the
    first invalid row raises :class:`MalformedRow`,
    :class:`NonMonotoneTimestamp` or :class:`UnknownEventKind`, carrying its
    line number; with ``on_error="skip"`` invalid rows are dropped and
    listed in ``report``.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    report = report if report is not None else ParseReport()
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from parse_tape(fh, chunk_bytes=chunk_bytes,
                                  on_error=on_error, report=report)
        return

    head = source.peek(len(BINARY_MAGIC))[:len(BINARY_MAGIC)] \
        if hasattr(source, "peek") else None
    if head is None:
        source = io.BufferedReader(source)  # type: ignore[arg-type]
        head = source.peek(len(BINARY_MAGIC))[:len(BINARY_MAGIC)]
    if head == BINARY_MAGIC:
        batches = _iter_binary(source)
    else:
        batches = _iter_csv(source, chunk_bytes)

    last_ts = np.iinfo(np.int64).min
    for tape, first_line in batches:
        tape, last_ts = _validate(tape, first_line, last_ts, on_error, report)
        report.n_rows += len(tape)
        if len(tape):
            yield tape


def read_tape(source, **kwargs) -> Tape:
    """Read a whole tape into memory."""
    return Tape.concat(list(parse_tape(source, **kwargs)))


_CSV_DTYPES = {
    "ts_ns": np.int64, "order_id": object, "trader_id": object,
    "event": object, "side": np.int64, "price_ticks": np.int64,
    "size": np.int64, "best_bid": np.float64, "best_ask": np.float64,
    "bid_size": np.float64, "ask_size": np.float64,
}
_QUOTE_COLS = ("best_bid", "best_ask", "bid_size", "ask_size")


def _iter_csv(fh: BinaryIO, chunk_bytes: int):
    header = fh.readline()
    if header.rstrip(b"\r\n") != HEADER.rstrip(b"\n"):
        raise MalformedRow(f"unexpected header {header[:200]!r}", line=1)
    line = 2
    carry = b""
    while True:
        block = fh.read(chunk_bytes)
        if block:
            block = carry + block
            cut = block.rfind(b"\n")
            if cut < 0:
                carry = block
                continue
            chunk, carry = block[:cut + 1], block[cut + 1:]
        else:
            if not carry:
                return
            chunk, carry = carry + b"\n", b""
        tape, n_lines = _parse_csv_chunk(chunk, line)
        yield tape, line
        line += n_lines
        if not block:
            return


def _parse_csv_chunk(chunk: bytes, first_line: int) -> tuple[Tape, int]:
    buf = np.frombuffer(chunk, dtype=np.uint8)
    newlines = np.flatnonzero(buf == 10)
    commas = np.flatnonzero(buf == 44)
    n_fields = np.diff(np.searchsorted(commas, newlines), prepend=0) + 1
    bad = np.flatnonzero(n_fields != len(COLUMNS))
    if bad.size:
        i = int(bad[0])
        raise MalformedRow(f"expected {len(COLUMNS)} fields, found "
                           f"{int(n_fields[i])}", line=first_line + i)
    try:
        df = pd.read_csv(io.BytesIO(chunk), header=None, names=COLUMNS,
                         dtype=_CSV_DTYPES, keep_default_na=False,
                         na_values={c: [""] for c in _QUOTE_COLS},
                         engine="c")
    except (ValueError, pd.errors.ParserError):
        _locate_bad_field(chunk, first_line)
        raise  # pragma: no cover - _locate_bad_field always raises

    quotes = []
    for c in _QUOTE_COLS:
        x = df[c].to_numpy()
        nan = np.isnan(x)
        if np.any(x[~nan] != np.floor(x[~nan])):
            i = int(np.flatnonzero(~nan & (x != np.floor(x)))[0])
            raise MalformedRow(f"non-integer {c}", line=first_line + i)
        q = np.full(len(x), MISSING, dtype=np.int64)
        q[~nan] = x[~nan].astype(np.int64)
        quotes.append(q)

    letters = df["event"].to_numpy()
    codes = np.full(len(df), 255, dtype=np.uint8)
    for code, letter in enumerate(EVENT_LETTERS):
        codes[letters == letter] = code
    unknown = np.flatnonzero(codes == 255)
    if unknown.size:
        i = int(unknown[0])
        raise UnknownEventKind(f"unknown event {letters[i]!r}",
                               line=first_line + i)
    side = df["side"].to_numpy()
    tape = Tape(df["ts_ns"].to_numpy(), df["order_id"].to_numpy(),
                df["trader_id"].to_numpy(), codes,
                np.clip(side, -128, 127), df["price_ticks"].to_numpy(),
                df["size"].to_numpy(), *quotes)
    badside = np.flatnonzero((side != 1) & (side != -1))
    if badside.size:
        # Kept as 0 so the validator reports it with the right line.
        tape.side[badside] = 0
    return tape, len(newlines)


def _locate_bad_field(chunk: bytes, first_line: int):
    df = pd.read_csv(io.BytesIO(chunk), header=None, names=COLUMNS,
                     dtype=str, keep_default_na=False, engine="c")
    for col in ("ts_ns", "side", "price_ticks", "size") + _QUOTE_COLS:
        s = df[col]
        required = col not in _QUOTE_COLS
        ok = s.str.fullmatch(r"-?\d+")
        if not required:
            ok = ok | (s == "")
        bad = np.flatnonzero(~ok.to_numpy())
        if bad.size:
            i = int(bad[0])
            raise MalformedRow(f"bad {col} value {s.iloc[i]!r}",
                               line=first_line + i)
    raise MalformedRow("unparseable chunk", line=first_line)


def _iter_binary(fh: BinaryIO):
    fh.read(len(BINARY_MAGIC))
    record = 1
    while True:
        head = fh.read(4)
        if not head:
            return
        if len(head) < 4:
            raise MalformedRow("truncated block header", line=record)
        (nbytes,) = struct.unpack("<I", head)
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise MalformedRow("truncated block", line=record)
        tape = _decode_block(payload, record)
        yield tape, record
        record += len(tape)


def _decode_block(payload: bytes, record: int) -> Tape:
    (n,) = struct.unpack_from("<I", payload, 0)
    off = 4
    cols = {}
    for name, dt in (("ts", "<i8"), ("side", "<i1"), ("event", "<u1"),
                     ("price", "<i8"), ("size", "<i8"), ("best_bid", "<i8"),
                     ("best_ask", "<i8"), ("bid_size", "<i8"),
                     ("ask_size", "<i8")):
        width = np.dtype(dt).itemsize * n
        if off + width > len(payload):
            raise MalformedRow("short column data", line=record)
        cols[name] = np.frombuffer(payload, dtype=dt, count=n, offset=off)
        off += width
    ids = []
    for _ in range(2):
        (m,) = struct.unpack_from("<I", payload, off)
        off += 4
        text = payload[off:off + m].decode("utf-8")
        off += m
        parts = text.split("\n") if n else []
        if len(parts) != n:
            raise MalformedRow("id column length mismatch", line=record)
        ids.append(parts)
    bad = np.flatnonzero(cols["event"] > EXECUTE)
    if bad.size:
        raise UnknownEventKind(f"unknown event code {cols['event'][bad[0]]}",
                               line=record + int(bad[0]))
    return Tape(cols["ts"], ids[0], ids[1], cols["event"], cols["side"],
                cols["price"], cols["size"], cols["best_bid"],
                cols["best_ask"], cols["bid_size"], cols["ask_size"])


def _validate(tape: Tape, first_line: int, last_ts: int, on_error: str,
              report: ParseReport):
    n = len(tape)
    if n == 0:
        return tape, last_ts
    problems = []
    sized = tape.event != CANCEL
    bad = np.flatnonzero(sized & (tape.size <= 0))
    if bad.size:
        problems.append((bad, MalformedRow, "size must be positive"))
    bad = np.flatnonzero((tape.side != 1) & (tape.side != -1))
    if bad.size:
        problems.append((bad, MalformedRow, "side must be 1 or -1"))
    both = tape.has_quotes()
    bad = np.flatnonzero(both & (tape.best_bid >= tape.best_ask))
    if bad.size:
        problems.append((bad, MalformedRow, "crossed or locked quotes"))

    if on_error == "raise":
        prev = np.concatenate([[last_ts], tape.ts[:-1]])
        bad = np.flatnonzero(tape.ts < prev)
        if bad.size:
            problems.append((bad, NonMonotoneTimestamp,
                             "timestamp decreases"))
        if problems:
            i, cls, msg = min(((int(b[0]), c, m) for b, c, m in problems),
                              key=lambda p: p[0])
            raise cls(msg, line=first_line + i)
        return tape, int(tape.ts[-1])

    keep = np.ones(n, dtype=bool)
    for rows, _, msg in problems:
        keep[rows] = False
        report.dropped.extend((first_line + int(r), msg) for r in rows)
    running = np.maximum.accumulate(
        np.concatenate([[last_ts], np.where(keep, tape.ts, last_ts)]))[:-1]
    backwards = keep & (tape.ts < running)
    for r in np.flatnonzero(backwards):
        report.dropped.append((first_line + int(r), "timestamp decreases"))
    keep &= ~backwards
    report.dropped.sort()
    tape = tape[keep]
    if len(tape):
        last_ts = max(last_ts, int(tape.ts[-1]))
    return tape, last_ts


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def format_csv(tape: Tape, header: bool = False) -> bytes:
    """Canonical CSV text for ``tape``; parse→format is byte-identical."""
    cols = {
        "ts_ns": tape.ts,
        "order_id": tape.order_id,
        "trader_id": tape.trader_id,
        "event": np.asarray(EVENT_LETTERS, dtype=object)[tape.event],
        "side": tape.side,
        "price_ticks": tape.price,
        "size": tape.size,
    }
    for name in _QUOTE_COLS:
        raw = getattr(tape, {"best_bid": "best_bid", "best_ask": "best_ask",
                             "bid_size": "bid_size",
                             "ask_size": "ask_size"}[name])
        cols[name] = pd.array(np.where(raw == MISSING, 0, raw),
                              dtype="Int64")
        cols[name][raw == MISSING] = pd.NA
    text = pd.DataFrame(cols).to_csv(index=False, header=False,
                                     lineterminator="\n")
    body = text.encode()
    return (HEADER + body) if header else body


def encode_binary_block(tape: Tape) -> bytes:
    n = len(tape)
    parts = [struct.pack("<I", n)]
    for name, dt in (("ts", "<i8"), ("side", "<i1"), ("event", "<u1"),
                     ("price", "<i8"), ("size", "<i8"), ("best_bid", "<i8"),
                     ("best_ask", "<i8"), ("bid_size", "<i8"),
                     ("ask_size", "<i8")):
        parts.append(np.ascontiguousarray(getattr(tape, name),
                                          dtype=dt).tobytes())
    for ids in (tape.order_id, tape.trader_id):
        blob = "\n".join(map(str, ids)).encode("utf-8")
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
    payload = b"".join(parts)
    return struct.pack("<I", len(payload)) + payload


class TapeWriter:
    """Incremental tape writer (context manager).

    Batches passed to :meth:`write` must continue the time order of the
    previous ones.
    """

    def __init__(self, dest, fmt: str = "csv"):
        if fmt not in ("csv", "binary"):
            raise ValueError("fmt must be 'csv' or 'binary'")
        self.fmt = fmt
        self._own = isinstance(dest, (str, os.PathLike))
        self._fh = open(dest, "wb") if self._own else dest
        self._fh.write(HEADER if fmt == "csv" else BINARY_MAGIC)
        self.n_rows = 0

    def write(self, tape: Tape) -> None:
        if not len(tape):
            return
        if self.fmt == "csv":
            self._fh.write(format_csv(tape))
        else:
            self._fh.write(encode_binary_block(tape))
        self.n_rows += len(tape)

    def close(self) -> None:
        if self._own:
            self._fh.close()
        else:
            self._fh.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_tape(tapes, dest, fmt: str = "csv") -> int:
    """Write one tape or an iterable of tape batches; returns the row count."""
    if isinstance(tapes, Tape):
        tapes = [tapes]
    with TapeWriter(dest, fmt) as w:
        for t in tapes:
            w.write(t)
    return w.n_rows


# ---------------------------------------------------------------------------
# Stock metadata sidecar
# ---------------------------------------------------------------------------

@dataclass
class StockMeta:
    stock_id: str
    tick_size: float = 1.0
    session_date: _dt.date | None = None
    extra: dict = field(default_factory=dict)


def meta_path(tape_path) -> Path:
    return Path(tape_path).with_suffix(".meta")


def write_meta(meta: StockMeta, path) -> None:
    lines = [f"stock_id={meta.stock_id}", f"tick_size={meta.tick_size!r}"]
    if meta.session_date is not None:
        lines.append(f"session_date={meta.session_date.isoformat()}")
    lines += [f"{k}={v}" for k, v in sorted(meta.extra.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> StockMeta:
    kv = {}
    for raw in Path(path).read_text().splitlines():
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        k, _, v = raw.partition("=")
        kv[k.strip()] = v.strip()
    date = kv.pop("session_date", None)
    return StockMeta(
        stock_id=kv.pop("stock_id", "UNKNOWN"),
        tick_size=float(kv.pop("tick_size", 1.0)),
        session_date=_dt.date.fromisoformat(date) if date else None,
        extra=kv,
    )


# ---------------------------------------------------------------------------
# Market orders and their fills
# ---------------------------------------------------------------------------

@dataclass
class MarketOrders:
    """Market orders of a tape joined with their fills.

    ``q`` is the total filled size; ``ts`` the time of the first fill;
    ``log_mid_before`` comes from the ``M`` row quotes and
    ``log_mid_after`` from the quotes on the order's last fill.  Orders
    without fills are dropped.
    """

    row: np.ndarray
    ts: np.ndarray
    trader_id: np.ndarray
    sign: np.ndarray
    q: np.ndarray
    opposite_size: np.ndarray
    log_mid_before: np.ndarray
    log_mid_after: np.ndarray
    n_fills: np.ndarray

    def __len__(self) -> int:
        return len(self.row)


def fill_parents(tape: Tape) -> np.ndarray:
    """For every row, the index of the ``M`` row an ``X`` row fills, else -1."""
    n = len(tape)
    idx = np.arange(n)
    is_x = tape.event == EXECUTE
    last = np.maximum.accumulate(np.where(~is_x, idx, -1)) if n else idx
    parent = np.where(is_x & (last >= 0), last, -1)
    linked = parent >= 0
    linked[linked] = tape.event[parent[linked]] == MARKET
    return np.where(linked, parent, -1)


def market_orders(tape: Tape) -> MarketOrders:
    parent = fill_parents(tape)
    is_fill = parent >= 0
    m_rows = np.flatnonzero(tape.event == MARKET)
    n = len(tape)
    filled = np.bincount(parent[is_fill], weights=tape.size[is_fill],
                         minlength=n)[m_rows].astype(np.int64)
    n_fills = np.bincount(parent[is_fill], minlength=n)[m_rows]
    keep = n_fills > 0
    m_rows, filled, n_fills = m_rows[keep], filled[keep], n_fills[keep]
    first = m_rows + 1
    last = m_rows + n_fills
    logmid = tape.log_mid()
    sign = tape.side[m_rows].astype(np.int64)
    opp = np.where(sign > 0, tape.ask_size[m_rows], tape.bid_size[m_rows])
    return MarketOrders(
        row=m_rows,
        ts=tape.ts[first],
        trader_id=tape.trader_id[m_rows],
        sign=sign,
        q=filled,
        opposite_size=opp,
        log_mid_before=logmid[m_rows],
        log_mid_after=logmid[last],
        n_fills=n_fills,
    )


def executed_mask(tape: Tape) -> np.ndarray:
    """Fill rows that belong to a market order (these make up V_D)."""
    return fill_parents(tape) >= 0


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

@dataclass
class Session:
    """One trimmed half-day of one stock, treated as an independent day."""

    stock_id: str
    date: _dt.date
    half: str
    events: Tape
    start_ns: int
    end_ns: int
    V_D: int = 0
    sigma_D: float = float("nan")
    flags: set = field(default_factory=set)
    _mo: MarketOrders | None = field(default=None, repr=False, compare=False)

    @property
    def session_id(self) -> tuple:
        return (self.date, self.half)

    @property
    def label(self) -> str:
        return f"{self.date.isoformat()}-{self.half}"

    @property
    def length_s(self) -> float:
        return (self.end_ns - self.start_ns) / SECOND_NS

    def market_orders(self) -> MarketOrders:
        if self._mo is None:
            self._mo = market_orders(self.events)
        return self._mo

    def with_events(self, events: Tape) -> "Session":
        """Copy with replaced events (statistics are kept, not recomputed)."""
        return Session(self.stock_id, self.date, self.half, events,
                       self.start_ns, self.end_ns, self.V_D, self.sigma_D,
                       set(self.flags))

    def volume_clock(self, t_ns):
        return volume_clock(self, t_ns)


def session_window(date: _dt.date, half: str) -> tuple[int, int]:
    """Trimmed ``[start, end)`` of a half-day session in absolute ns."""
    day0 = (date - _dt.date(1970, 1, 1)).days * DAY_NS
    lo, hi = RAW_WINDOWS[half]
    return day0 + lo * MINUTE_NS + TRIM_NS, day0 + hi * MINUTE_NS - TRIM_NS


def _ns_to_date(ns: int) -> _dt.date:
    return _dt.date(1970, 1, 1) + _dt.timedelta(days=int(ns // DAY_NS))


def split_sessions(events, stock_id: str = "UNKNOWN") -> list[Session]:
    """Cut a tape (or stream of batches) into trimmed half-day sessions."""
    return list(iter_sessions(events, stock_id))


def iter_sessions(events, stock_id: str = "UNKNOWN") -> Iterator[Session]:
    """Streaming :func:`split_sessions`: holds one session in memory.

    Events outside ``[09:10, 11:20) ∪ [12:40, 14:50)`` are discarded.  A
    half-day with raw events but none surviving the trim yields a session
    flagged ``"empty"`` with ``V_D = 0``.
    """
    if isinstance(events, Tape):
        events = [events]
    current_key = None
    pieces: list[Tape] = []
    for batch in events:
        if not len(batch):
            continue
        tod = batch.ts % DAY_NS
        day = batch.ts // DAY_NS
        half = np.full(len(batch), -1, dtype=np.int8)
        for code, name in enumerate(("AM", "PM")):
            lo, hi = RAW_WINDOWS[name]
            half[(tod >= lo * MINUTE_NS) & (tod < hi * MINUTE_NS)] = code
        in_raw = half >= 0
        key = day * 2 + half
        # Tapes are time ordered, so session keys are non-decreasing among
        # in-window rows; cut at every key change.
        rows = np.flatnonzero(in_raw)
        if not rows.size:
            continue
        k = key[rows]
        cuts = np.flatnonzero(np.diff(k)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [len(rows)]])
        for a, b in zip(starts, stops):
            this = int(k[a])
            if current_key is not None and this != current_key:
                yield _finish_session(current_key, pieces, stock_id)
                pieces = []
            current_key = this
            pieces.append(batch[rows[a:b]])
    if current_key is not None:
        yield _finish_session(current_key, pieces, stock_id)


def _finish_session(key: int, pieces: list[Tape], stock_id: str) -> Session:
    day, half_code = divmod(key, 2)
    date = _dt.date(1970, 1, 1) + _dt.timedelta(days=int(day))
    half = ("AM", "PM")[half_code]
    start, end = session_window(date, half)
    raw = Tape.concat(pieces)
    events = raw[(raw.ts >= start) & (raw.ts < end)]
    sess = Session(stock_id, date, half, events, start, end)
    if not len(events):
        sess.flags.add("empty")
        sess.V_D = 0
        return sess
    sess.V_D = int(events.size[executed_mask(events)].sum())
    try:
        sess.V_D, sess.sigma_D = session_stats(sess)
    except NoQuotes:
        sess.flags.add("no_quotes")
    return sess


def session_stats(session: Session) -> tuple[int, float]:
    """``(V_D, sigma_D)``: executed market-order volume and range proxy.

    ``sigma_D = (max mid - min mid) / first mid`` over the trimmed session.
    """
    ev = session.events
    v_d = int(ev.size[executed_mask(ev)].sum())
    mid = ev.mid()
    mid = mid[~np.isnan(mid)]
    if not mid.size:
        raise NoQuotes(f"session {session.label} has no best-quote snapshot")
    return v_d, float((mid.max() - mid.min()) / mid[0])


def volume_clock(session: Session, t_ns):
    """Shares executed by market orders at or before ``t_ns``.

    Right-continuous step function; equals ``V_D`` at the session end.
    Accepts a scalar or an array of times.
    """
    t = np.asarray(t_ns, dtype=np.int64)
    if np.any(t < session.start_ns) or np.any(t > session.end_ns):
        raise OutOfSession(f"time outside session {session.label}")
    ev = session.events
    ex = executed_mask(ev)
    ts = ev.ts[ex]
    cum = np.concatenate([[0], np.cumsum(ev.size[ex])])
    out = cum[np.searchsorted(ts, t, side="right")]
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Intraday seasonality
# ---------------------------------------------------------------------------

@dataclass
class SeasonalityProfile:
    """Average intraday volatility and volume per 15-minute bin.

    Bins start at the trimmed session open; the last bin of each half is
    shorter (the trimmed half-day is 130 minutes).  ``flags[h][k]`` is True
    where no session had data in the bin, in which case the bin's values
    are zero.
    """

    bin_minutes: int
    sigma_b: dict
    V_b: dict
    sigma_se: dict
    V_se: dict
    n_sessions: dict
    flags: dict
    year: int | None = None

    def n_bins(self, half: str) -> int:
        return len(self.V_b[half])

    def bin_index(self, half: str, ts_ns, start_ns: int):
        k = (np.asarray(ts_ns) - start_ns) // (self.bin_minutes * MINUTE_NS)
        return np.clip(k, 0, self.n_bins(half) - 1)

    def lookup(self, session: Session, ts_ns):
        """``(sigma_b, V_b)`` of the bins containing ``ts_ns``."""
        k = self.bin_index(session.half, ts_ns, session.start_ns)
        return self.sigma_b[session.half][k], self.V_b[session.half][k]


def _bins_per_half(bin_minutes: int) -> int:
    lo, hi = RAW_WINDOWS["AM"]
    span = (hi - lo) - 20
    return -(-span // bin_minutes)


def seasonality_profile(sessions: Sequence[Session],
                        bin_minutes: int = 15) -> SeasonalityProfile:
    """Per-bin mean of ``(high - low) / open`` and of executed volume."""
    nb = _bins_per_half(bin_minutes)
    acc = {h: {"s": [[] for _ in range(nb)], "v": [[] for _ in range(nb)]}
           for h in ("AM", "PM")}
    years = set()
    for sess in sessions:
        years.add(sess.date.year)
        ev = sess.events
        k = np.clip((ev.ts - sess.start_ns) // (bin_minutes * MINUTE_NS),
                    0, nb - 1)
        ex = executed_mask(ev)
        vol = np.bincount(k[ex], weights=ev.size[ex], minlength=nb)
        mid = ev.mid()
        ok = ~np.isnan(mid)
        for b in range(nb):
            acc[sess.half]["v"][b].append(vol[b])
            m = mid[ok & (k == b)]
            if m.size:
                acc[sess.half]["s"][b].append((m.max() - m.min()) / m[0])
    if len(years) > 1:
        warnings.warn("sessions span several calendar years; use "
                      "seasonality_by_year for yearly profiles")
    out = {key: {} for key in ("sigma_b", "V_b", "sigma_se", "V_se",
                               "n_sessions", "flags")}
    for h in ("AM", "PM"):
        s_mean, s_se, v_mean, v_se, flag = [], [], [], [], []
        n_sess = len(acc[h]["v"][0])
        for b in range(nb):
            s = np.asarray(acc[h]["s"][b])
            v = np.asarray(acc[h]["v"][b])
            flag.append(s.size == 0)
            s_mean.append(s.mean() if s.size else 0.0)
            s_se.append(s.std(ddof=1) / np.sqrt(s.size) if s.size > 1
                        else 0.0)
            v_mean.append(v.mean() if v.size else 0.0)
            v_se.append(v.std(ddof=1) / np.sqrt(v.size) if v.size > 1
                        else 0.0)
        out["sigma_b"][h] = np.asarray(s_mean)
        out["sigma_se"][h] = np.asarray(s_se)
        out["V_b"][h] = np.asarray(v_mean)
        out["V_se"][h] = np.asarray(v_se)
        out["n_sessions"][h] = n_sess
        out["flags"][h] = np.asarray(flag)
    return SeasonalityProfile(bin_minutes, year=min(years) if years else None,
                              **out)


def seasonality_by_year(sessions: Sequence[Session],
                        bin_minutes: int = 15) -> dict[int, SeasonalityProfile]:
    """One profile per calendar year; warns about partial years."""
    by_year: dict[int, list[Session]] = {}
    for s in sessions:
        by_year.setdefault(s.date.year, []).append(s)
    out = {}
    for year, group in sorted(by_year.items()):
        months = {s.date.month for s in group}
        if min(months) > 1 or max(months) < 12:
            warnings.warn(f"year {year} is partial "
                          f"(months {min(months)}-{max(months)})")
        out[year] = seasonality_profile(group, bin_minutes)
    return out


def seasonality_frame(profiles) -> pd.DataFrame:
    """Long table of one profile or a ``{year: profile}`` dict."""
    if isinstance(profiles, SeasonalityProfile):
        profiles = {profiles.year: profiles}
    rows = []
    for year, p in sorted(profiles.items(), key=lambda kv: (kv[0] is None, kv[0])):
        for h in ("AM", "PM"):
            nb = p.n_bins(h)
            rows.append(pd.DataFrame({
                "year": -1 if year is None else year, "half": h,
                "bin": np.arange(nb), "bin_minutes": p.bin_minutes,
                "sigma_b": p.sigma_b[h], "sigma_se": p.sigma_se[h],
                "V_b": p.V_b[h], "V_se": p.V_se[h],
                "n_sessions": p.n_sessions[h], "empty": p.flags[h]}))
    return pd.concat(rows, ignore_index=True)


def seasonality_from_frame(df: pd.DataFrame):
    """Inverse of :func:`seasonality_frame`: a profile, or a dict by year
    when the table holds several years."""
    out = {}
    for year, g in df.groupby("year", sort=True):
        kw = {k: {} for k in ("sigma_b", "V_b", "sigma_se", "V_se",
                              "n_sessions", "flags")}
        for h in ("AM", "PM"):
            gh = g[g["half"] == h].sort_values("bin")
            if gh.empty:
                raise DataError(f"seasonality table lacks the {h} half")
            for k in ("sigma_b", "V_b", "sigma_se", "V_se"):
                kw[k][h] = gh[k].to_numpy(dtype=float)
            kw["n_sessions"][h] = int(gh["n_sessions"].iloc[0])
            kw["flags"][h] = gh["empty"].to_numpy(dtype=bool)
        y = int(year)
        out[y] = SeasonalityProfile(int(g["bin_minutes"].iloc[0]),
                                    year=None if y < 0 else y, **kw)
    if not out:
        raise DataError("empty seasonality table")
    return next(iter(out.values())) if len(out) == 1 else out
