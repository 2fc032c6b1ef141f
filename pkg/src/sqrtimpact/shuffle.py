"""Synthetic metaorders by shuffling trader IDs over a session's market orders.

The permutation is a Fisher-Yates shuffle driven by a small, fully
specified generator so that results are bit-identical on every platform
and numpy version:

* raw stream: SplitMix64, output ``k`` taken at state
  ``seed + (k + 1) * 0x9E3779B97F4A7C15`` (the reference sequence) for
  counter ``k = 0, 1, 2, ...``;
* bounded draw in ``[0, b)``: Lemire's multiply-shift on the upper 32 bits
  of one raw output, rejecting when the low product word is below
  ``(2**32 - b) % b`` (the rejected draw is replaced by the next unused
  counter value);
* shuffle: for ``i = n-1, ..., 1`` swap ``a[i]`` with ``a[j]``,
  ``j = draw(i + 1)``; draws use counters in that order.

Only the trader IDs on ``M`` rows move; every other field stays in place.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import TooFewOrders
from .impact import DEFAULT_MIN_BIN_COUNT, ImpactCurve, metaorder_impact_curve
from .metaorder import MetaorderSet, reconstruct
from .tape import MARKET, Session

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, counters) -> np.ndarray:
    """SplitMix64 outputs for the given counter values."""
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK64) + (np.asarray(counters, dtype=np.uint64)
                                         + np.uint64(1)) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def bounded_draws(seed: int, bounds) -> np.ndarray:
    """One uniform integer in ``[0, b)`` per entry of ``bounds`` (< 2**32)."""
    b = np.asarray(bounds, dtype=np.uint64)
    n = len(b)
    x = splitmix64(seed, np.arange(n)) >> np.uint64(32)
    m = x * b
    low = m & np.uint64(0xFFFFFFFF)
    out = (m >> np.uint64(32)).astype(np.int64)
    thresh = (np.uint64(1 << 32) - b) % np.maximum(b, np.uint64(1))
    counter = n
    for k in np.flatnonzero(low < thresh):
        bk = int(b[k])
        t = (2 ** 32 - bk) % bk
        while True:
            xk = int(splitmix64(seed, [counter])[0]) >> 32
            counter += 1
            mk = xk * bk
            if (mk & 0xFFFFFFFF) >= t:
                out[k] = mk >> 32
                break
    return out


def fisher_yates(values, seed: int) -> np.ndarray:
    """Shuffled copy of ``values``."""
    a = list(values)
    n = len(a)
    if n < 2:
        return np.asarray(a, dtype=object)
    bounds = np.arange(n, 1, -1)
    js = bounded_draws(seed, bounds).tolist()
    for i, j in zip(range(n - 1, 0, -1), js):
        a[i], a[j] = a[j], a[i]
    out = np.empty(n, dtype=object)
    out[:] = a
    return out


def session_seed(seed: int, session: Session) -> int:
    """Per-session seed: first 8 bytes of sha256 over ``seed``, stock and
    session label."""
    key = f"{int(seed)}:{session.stock_id}:{session.label}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


@dataclass
class ShuffledSession:
    base: Session
    seed: int
    session: Session
    market_rows: np.ndarray


def shuffle_ids(session: Session, seed: int) -> ShuffledSession:
    """Permute the trader IDs of the session's market orders."""
    ev = session.events
    rows = np.flatnonzero(ev.event == MARKET)
    if len(rows) < 2:
        raise TooFewOrders(f"session {session.label} has {len(rows)} market "
                           "orders; need at least 2")
    ids = ev.trader_id.copy()
    ids[rows] = fisher_yates(ev.trader_id[rows], session_seed(seed, session))
    shuffled = session.with_events(ev.replace(trader_id=ids))
    return ShuffledSession(session, int(seed), shuffled, rows)


@dataclass
class SyntheticResult:
    metaorders: MetaorderSet
    curve: ImpactCurve
    n_sessions: int
    n_skipped: int

    def size_summary(self) -> dict:
        ms = self.metaorders
        return {"n_metaorders": len(ms), "mean_Q": float(np.mean(ms.Q)) if len(ms) else 0.0,
                "median_Q": float(np.median(ms.Q)) if len(ms) else 0.0,
                "mean_N": float(np.mean(ms.N)) if len(ms) else 0.0}


def synthetic_metaorders(sessions, seed: int) -> tuple[MetaorderSet, int]:
    if isinstance(sessions, Session):
        sessions = [sessions]
    parts, skipped = [], 0
    for s in sessions:
        try:
            parts.append(reconstruct(shuffle_ids(s, seed).session))
        except TooFewOrders:
            skipped += 1
    return MetaorderSet.concat(parts), skipped


def synthetic_pipeline(sessions, seed: int, edges=None,
                       min_bin_count: int = DEFAULT_MIN_BIN_COUNT) -> SyntheticResult:
    """Shuffle, reconstruct and measure the impact curve of the result."""
    if isinstance(sessions, Session):
        sessions = [sessions]
    ms, skipped = synthetic_metaorders(sessions, seed)
    curve = metaorder_impact_curve(ms, edges, min_bin_count)
    return SyntheticResult(ms, curve, len(sessions), skipped)


# ---------------------------------------------------------------------------
# Curve comparison
# ---------------------------------------------------------------------------

@dataclass
class CurveComparison:
    z: np.ndarray
    shared: np.ndarray
    chi2: float
    dof: int
    p_value: float


def compare_curves(a: ImpactCurve, b: ImpactCurve,
                   min_bin_count: int | None = None) -> CurveComparison:
    """Per-bin z-scores and a global chi-square over bins both curves
    populate with at least ``min_bin_count`` observations."""
    from scipy import stats

    from .errors import BinMismatch

    if len(a.edges) != len(b.edges) or not np.allclose(a.edges, b.edges,
                                                       rtol=1e-12, atol=0):
        raise BinMismatch("curves do not share bin edges")
    mbc = max(a.min_bin_count, b.min_bin_count) if min_bin_count is None \
        else min_bin_count
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = np.sqrt(a.se ** 2 + b.se ** 2)
        z = (a.mean - b.mean) / denom
        z = np.where((denom == 0) & (a.mean == b.mean), 0.0, z)
    shared = (a.count >= mbc) & (b.count >= mbc) & np.isfinite(z)
    chi2 = float(np.sum(z[shared] ** 2))
    dof = int(shared.sum())
    p = float(stats.chi2.sf(chi2, dof)) if dof else float("nan")
    return CurveComparison(z, shared, chi2, dof, p)
