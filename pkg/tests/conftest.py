import datetime as dt

import pytest

from sqrtimpact.simulator import preset_paper_like, simulate
from sqrtimpact.tape import OrderEvent, Tape, session_window, split_sessions

DAY = dt.date(2024, 1, 4)


def ts_at(seconds: float, date: dt.date = DAY, half: str = "AM") -> int:
    """Absolute ns, ``seconds`` after the trimmed session start."""
    start, _ = session_window(date, half)
    return start + int(round(seconds * 1e9))


class TapeBuilder:
    """Small hand-written tapes with consistent quotes.

    ``market(t, trader, side, fills)`` writes an ``M`` row followed by one
    ``X`` row per ``(maker, size)`` fill; the mid moves by ``move`` ticks
    after the order.
    """

    def __init__(self, date=DAY, half="AM", bid=1000, ask=1002, depth=50):
        self.date, self.half = date, half
        self.bid, self.ask, self.depth = bid, ask, depth
        self.events = []
        self._oid = 0

    def _id(self):
        self._oid += 1
        return f"o{self._oid}"

    def _quotes(self):
        return dict(best_bid=self.bid, best_ask=self.ask,
                    bid_size=self.depth, ask_size=self.depth)

    def limit(self, t, trader, side, size=10, price=None):
        price = price if price is not None else (self.bid if side > 0 else self.ask)
        oid = self._id()
        self.events.append(OrderEvent(ts_at(t, self.date, self.half), oid,
                                      trader, "L", side, price, size,
                                      **self._quotes()))
        return oid

    def market(self, t, trader, side, fills, move=0):
        ts = ts_at(t, self.date, self.half)
        self.events.append(OrderEvent(ts, self._id(), trader, "M", side,
                                      self.ask if side > 0 else self.bid,
                                      sum(s for _, s in fills),
                                      **self._quotes()))
        self.bid += move
        self.ask += move
        for k, (maker, size) in enumerate(fills):
            if isinstance(maker, tuple):
                maker, oid = maker
            else:
                oid = self._id()
            self.events.append(OrderEvent(
                ts + k, oid, maker, "X", -side,
                self.bid - move if side < 0 else self.ask - move, size,
                **self._quotes()))

    def tape(self) -> Tape:
        return Tape.from_events(self.events)

    def session(self):
        (s,) = split_sessions(self.tape(), "TEST")
        return s


@pytest.fixture
def builder():
    return TapeBuilder()


@pytest.fixture(scope="session")
def small_sim():
    """A few paper-like sessions, shared by module tests."""
    cfg = preset_paper_like(seed=11, n_sessions=6)
    tape, ledger = simulate(cfg)
    return cfg, tape, ledger, split_sessions(tape, cfg.stock_id)


# One line per acceptance criterion, filled by tests/test_acceptance.py.
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
