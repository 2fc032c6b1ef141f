"""Metaorder reconstruction and execution stylized facts.

A metaorder is a maximal run of same-sign market orders sent by one trader
within one session.  Runs are cut by a sign flip of the same trader or by
the session end; other traders' orders in between do not matter.  Limit
fills of the trader are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .binning import BinAccumulator, log_edges
from .errors import DegenerateDuration, InsufficientData
from .tape import SECOND_NS, Session


@dataclass(frozen=True)
class Child:
    t: float          # seconds since session start (first fill)
    q: int            # filled shares
    p: float          # log mid just before the order
    p_after: float    # log mid just after the last fill


@dataclass
class Metaorder:
    trader_id: str
    sign: int
    children: list
    session: str
    V_D: int
    sigma_D: float
    truncated: bool = False

    @property
    def N(self) -> int:
        return len(self.children)

    @property
    def Q(self) -> int:
        return int(sum(c.q for c in self.children))

    @property
    def T(self) -> float:
        return self.children[-1].t - self.children[0].t

    @property
    def f(self) -> float:
        return self.Q / self.V_D if self.V_D else float("nan")


class MetaorderSet:
    """Column store of metaorders with their children in CSR layout.

    Metaorder ``k`` owns children ``ptr[k]:ptr[k+1]`` of the ``c_*``
    arrays.  Per-metaorder columns: ``session``, ``trader_id``, ``sign``,
    ``N``, ``Q``, ``T_s``, ``f``, ``start_ts``, ``end_ts``, ``truncated``,
    ``sigma_D``, ``V_D``.
    """

    META = ("session", "trader_id", "sign", "N", "Q", "T_s", "f",
            "start_ts", "end_ts", "truncated", "sigma_D", "V_D")
    CHILD = ("c_t", "c_ts", "c_q", "c_p", "c_p_after")

    def __init__(self, ptr, **cols):
        self.ptr = np.asarray(ptr, dtype=np.int64)
        for name in self.META + self.CHILD:
            setattr(self, name, cols[name])

    @classmethod
    def empty(cls) -> "MetaorderSet":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        obj = np.zeros(0, dtype=object)
        return cls(np.zeros(1, dtype=np.int64), session=obj, trader_id=obj,
                   sign=zi, N=zi, Q=zi, T_s=z, f=z, start_ts=zi, end_ts=zi,
                   truncated=np.zeros(0, dtype=bool), sigma_D=z, V_D=zi,
                   c_t=z, c_ts=zi, c_q=zi, c_p=z, c_p_after=z)

    @classmethod
    def concat(cls, sets: Sequence["MetaorderSet"]) -> "MetaorderSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        if len(sets) == 1:
            return sets[0]
        offsets = np.cumsum([0] + [len(s.c_q) for s in sets])
        ptr = np.concatenate([[0]] + [s.ptr[1:] + o
                                      for s, o in zip(sets, offsets)])
        cols = {n: np.concatenate([getattr(s, n) for s in sets])
                for n in cls.META + cls.CHILD}
        return cls(ptr, **cols)

    def __len__(self) -> int:
        return len(self.N)

    def __getitem__(self, k):
        if isinstance(k, (int, np.integer)):
            return self._one(int(k))
        idx = np.arange(len(self))[k]
        counts = self.N[idx]
        ptr = np.concatenate([[0], np.cumsum(counts)])
        child_idx = (np.repeat(self.ptr[idx] - ptr[:-1], counts)
                     + np.arange(ptr[-1]))
        cols = {n: getattr(self, n)[idx] for n in self.META}
        cols.update({n: getattr(self, n)[child_idx] for n in self.CHILD})
        return MetaorderSet(ptr, **cols)

    def __iter__(self):
        for k in range(len(self)):
            yield self._one(k)

    def _one(self, k: int) -> Metaorder:
        a, b = self.ptr[k], self.ptr[k + 1]
        children = [Child(float(t), int(q), float(p), float(pa))
                    for t, q, p, pa in zip(self.c_t[a:b], self.c_q[a:b],
                                           self.c_p[a:b], self.c_p_after[a:b])]
        return Metaorder(self.trader_id[k], int(self.sign[k]), children,
                         self.session[k], int(self.V_D[k]),
                         float(self.sigma_D[k]), bool(self.truncated[k]))

    def child_owner(self) -> np.ndarray:
        """Metaorder index of every child."""
        return np.repeat(np.arange(len(self)), self.N)

    def child_rank(self) -> np.ndarray:
        """1-based rank of every child within its metaorder."""
        return np.arange(len(self.c_q)) - np.repeat(self.ptr[:-1], self.N) + 1

    def delta_p(self) -> np.ndarray:
        """Signed-free log-mid change from before the first child to after
        the last one."""
        return self.c_p_after[self.ptr[1:] - 1] - self.c_p[self.ptr[:-1]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "session_id": self.session, "trader_id": self.trader_id,
            "sign": self.sign, "N": self.N, "Q": self.Q, "T_s": self.T_s,
            "f": self.f, "start_ts": self.start_ts, "end_ts": self.end_ts,
        })

    def children_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "metaorder": self.child_owner(), "rank": self.child_rank(),
            "ts_ns": self.c_ts, "q": self.c_q, "log_mid_before": self.c_p,
            "log_mid_after": self.c_p_after,
        })


def reconstruct(session: Session, gap_split_s: float | None = None) -> MetaorderSet:
    """Split each trader's market-order stream into sign runs.

    ``gap_split_s`` optionally also cuts a run when two consecutive children
    are more than that many seconds apart (off by default).
    """
    mo = session.market_orders()
    n = len(mo)
    if n == 0:
        return MetaorderSet.empty()
    codes, _ = pd.factorize(mo.trader_id)
    order = np.lexsort((np.arange(n), codes))
    c = codes[order]
    s = mo.sign[order]
    ts = mo.ts[order]
    new = np.ones(n, dtype=bool)
    new[1:] = (c[1:] != c[:-1]) | (s[1:] != s[:-1])
    if gap_split_s is not None:
        gap = np.zeros(n, dtype=bool)
        gap[1:] = (ts[1:] - ts[:-1]) > gap_split_s * SECOND_NS
        new |= gap
    starts = np.flatnonzero(new)
    # Put metaorders in order of their first child (ties by trader code).
    first_row = mo.row[order][starts]
    meta_order = np.argsort(first_row, kind="stable")
    starts_sorted = starts[meta_order]
    stops = np.append(starts[1:], n)[meta_order]
    counts = stops - starts_sorted
    child_idx = (np.repeat(starts_sorted - np.concatenate([[0], np.cumsum(counts)[:-1]]),
                           counts) + np.arange(counts.sum()))
    src = order[child_idx]

    ptr = np.concatenate([[0], np.cumsum(counts)])
    q = mo.q[src]
    c_ts = mo.ts[src]
    Q = np.add.reduceat(q, ptr[:-1])
    start_ts = c_ts[ptr[:-1]]
    end_ts = c_ts[ptr[1:] - 1]
    # A run ending with the trader's last order was cut by the session end.
    last_of_trader = np.ones(n, dtype=bool)
    last_of_trader[:-1] = c[1:] != c[:-1]
    truncated = last_of_trader[(stops - 1)]
    m = len(counts)
    v_d = session.V_D
    return MetaorderSet(
        ptr,
        session=np.full(m, session.label, dtype=object),
        trader_id=mo.trader_id[src[ptr[:-1]]],
        sign=mo.sign[src[ptr[:-1]]].astype(np.int64),
        N=counts.astype(np.int64),
        Q=Q.astype(np.int64),
        T_s=(end_ts - start_ts) / SECOND_NS,
        f=Q / v_d if v_d else np.full(m, np.nan),
        start_ts=start_ts,
        end_ts=end_ts,
        truncated=truncated,
        sigma_D=np.full(m, session.sigma_D),
        V_D=np.full(m, v_d, dtype=np.int64),
        c_t=(c_ts - session.start_ns) / SECOND_NS,
        c_ts=c_ts,
        c_q=q,
        c_p=mo.log_mid_before[src],
        c_p_after=mo.log_mid_after[src],
    )


def reconstruct_all(sessions, gap_split_s: float | None = None) -> MetaorderSet:
    return MetaorderSet.concat([reconstruct(s, gap_split_s) for s in sessions])


# ---------------------------------------------------------------------------
# Stylized facts
# ---------------------------------------------------------------------------

@dataclass
class StylizedFacts:
    """Mean inter-child time and child count per ``f`` bin, and the ``f``
    histogram (density per unit ``log10 f``)."""

    dt: pd.DataFrame
    n_children: pd.DataFrame
    f_hist: pd.DataFrame

    def f_mode(self) -> float:
        h = self.f_hist
        k = int(np.argmax(h["density"].to_numpy()))
        return float(np.sqrt(h["f_lo"].iloc[k] * h["f_hi"].iloc[k]))


def _curve(edges, x, y) -> pd.DataFrame:
    center, mean, std, se, count = BinAccumulator(edges).add(x, y).stats()
    df = pd.DataFrame({"f_lo": edges[:-1], "f_hi": edges[1:], "f": center,
                       "mean": mean, "std": std, "se": se, "count": count})
    return df[df["count"] > 0].reset_index(drop=True)


def stylized_facts(ms: MetaorderSet, edges=None) -> StylizedFacts:
    """Mean inter-child time and mean N versus f, plus the f distribution."""
    edges = log_edges(1e-6, 1.0, 4) if edges is None else np.asarray(edges)
    multi = ms.N >= 2
    dt = np.where(multi, ms.T_s / np.maximum(ms.N - 1, 1), np.nan)
    dt_curve = _curve(edges, ms.f[multi], dt[multi])
    n_curve = _curve(edges, ms.f, ms.N.astype(float))
    counts, _ = np.histogram(ms.f[np.isfinite(ms.f)], bins=edges)
    width = np.diff(np.log10(edges))
    total = counts.sum()
    density = counts / (total * width) if total else np.zeros_like(width)
    f_hist = pd.DataFrame({"f_lo": edges[:-1], "f_hi": edges[1:],
                           "count": counts, "density": density})
    return StylizedFacts(dt_curve, n_curve, f_hist)


def n_vs_f_exponent(facts: StylizedFacts, f_min: float = 1e-3,
                    min_count: int = 10) -> tuple[float, float]:
    """Power-law exponent of mean N versus f for ``f >= f_min``: ``(slope, se)``."""
    from .impact import fit_power_curve

    df = facts.n_children
    df = df[(df["f"] >= f_min) & (df["count"] >= min_count)]
    fit = fit_power_curve(df["f"], df["mean"], df["se"].replace(0, np.nan)
                          .fillna(df["mean"] * 1e-3))
    return fit.exponent, fit.exponent_se


@dataclass
class ScheduleProfile:
    """Mean executed fraction on a grid of rescaled execution times."""

    grid: np.ndarray
    mean: np.ndarray
    count: int
    n_degenerate: int = 0
    mode: str = "step"

    def max_deviation(self) -> float:
        """Largest distance from the diagonal."""
        return float(np.max(np.abs(self.mean - self.grid)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.grid, "executed_fraction": self.mean})


def execution_profile(ms: MetaorderSet, n_bins: int = 20,
                      mode: str = "step") -> ScheduleProfile:
    """Average executed fraction versus rescaled time ``(t - t_1) / T``.

    ``mode="step"`` evaluates ``sum(q_j for t_j <= t) / Q`` directly, so
    the profile starts at the mean first-child fraction and ends at 1.
    ``mode="slot"`` spreads each child uniformly over a slot of one mean
    spacing ``T/(N-1)`` starting at its time and rescales over the
    ``N`` slots; a constant-rate schedule then maps exactly onto the
    diagonal.  Metaorders with ``N = 1`` are skipped; those with ``N >= 2``
    and ``T = 0`` are skipped and counted in ``n_degenerate``.
    """
    if mode not in ("step", "slot"):
        raise ValueError("mode must be 'step' or 'slot'")
    grid = np.linspace(0.0, 1.0, n_bins + 1)
    multi = ms.N >= 2
    degenerate = multi & (ms.T_s <= 0)
    use = multi & ~degenerate
    n_deg = int(degenerate.sum())
    if not use.any():
        if n_deg:
            raise DegenerateDuration(f"all {n_deg} multi-child metaorders "
                                     "have zero duration")
        raise InsufficientData("no metaorder with at least two children")
    sub = ms[use]
    owner = sub.child_owner()
    t0 = sub.c_t[sub.ptr[:-1]][owner]
    T = sub.T_s[owner]
    w = sub.c_q / sub.Q[owner]
    x = sub.c_t - t0
    spacing = T / (sub.N[owner] - 1)
    total = np.zeros_like(grid)
    block = 100_000
    for a in range(0, len(x), block):
        sl = slice(a, a + block)
        if mode == "step":
            c = x[sl, None] <= grid[None, :] * T[sl, None]
        else:
            span = T[sl] + spacing[sl]
            c = np.clip((grid[None, :] * span[:, None] - x[sl, None])
                        / spacing[sl, None], 0.0, 1.0)
        total += (c * w[sl, None]).sum(axis=0)
    mean = total / len(sub)
    return ScheduleProfile(grid, mean, len(sub), n_deg, mode)
