"""Trader ecology: reversal times, fast/slow split, participation, inventories.

A trader's reversal time ``tau`` is the mean time between two consecutive
orders of opposite sign.  A trader is *fast* when ``tau`` is shorter than
the trimmed session; traders that never reverse are *slow*.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .tape import LIMIT, MARKET, SECOND_NS, Session, fill_parents


def reversal_time(times, signs) -> float:
    """Mean gap between consecutive opposite-sign orders; NaN if none."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(signs)
    if t.size < 2:
        return float("nan")
    flip = s[1:] != s[:-1]
    if not flip.any():
        return float("nan")
    return float(np.mean(np.diff(t)[flip]))


def _flip_gaps(session: Session, market_only: bool):
    """``(codes, gaps_s, uniques)`` for every sign flip in the session."""
    ev = session.events
    kinds = (ev.event == MARKET) if market_only else \
        ((ev.event == MARKET) | (ev.event == LIMIT))
    rows = np.flatnonzero(kinds)
    codes, uniques = pd.factorize(ev.trader_id[rows])
    order = np.lexsort((rows, codes))
    c = codes[order]
    r = rows[order]
    s = ev.side[r]
    same = c[1:] == c[:-1]
    flip = same & (s[1:] != s[:-1])
    gaps = (ev.ts[r[1:]] - ev.ts[r[:-1]])[flip] / SECOND_NS
    return c[1:][flip], gaps, uniques


@dataclass
class SessionEcology:
    session: str
    length_s: float
    V_D: int
    V_fast: int
    V_slow: int
    N_fast: int
    N_D: int
    volume_against_fast: int
    traders: pd.DataFrame = field(repr=False)

    @property
    def fast_volume_share(self) -> float:
        return self.V_fast / self.V_D if self.V_D else float("nan")

    @property
    def fast_count_share(self) -> float:
        return self.N_fast / self.N_D if self.N_D else float("nan")

    @property
    def against_fast_share(self) -> float:
        return self.volume_against_fast / self.V_D if self.V_D else float("nan")

    def summary(self) -> dict:
        return {"session": self.session, "V_D": self.V_D, "V_fast": self.V_fast,
                "V_slow": self.V_slow, "N_fast": self.N_fast, "N_D": self.N_D,
                "fast_volume_share": self.fast_volume_share,
                "fast_count_share": self.fast_count_share,
                "against_fast_share": self.against_fast_share}


def classify_session(session: Session, market_only: bool = False,
                     tau: dict | None = None) -> SessionEcology:
    """Per-trader reversal time and class, plus participation shares.

    ``V_fast`` counts market-order volume executed by fast aggressors and
    ``volume_against_fast`` the market-order volume filled against resting
    orders of fast traders.  ``N_D`` counts traders with at least one
    execution on either side.  ``tau`` optionally supplies precomputed
    reversal times (for the cross-session mode).
    """
    ev = session.events
    parent = fill_parents(ev)
    fills = np.flatnonzero(parent >= 0)
    aggressor = ev.trader_id[parent[fills]]
    resting = ev.trader_id[fills]
    size = ev.size[fills]
    agg_sign = ev.side[parent[fills]].astype(np.int64)

    if tau is None:
        fc, gaps, uniq = _flip_gaps(session, market_only)
        n_flips = np.bincount(fc, minlength=len(uniq))
        tot = np.bincount(fc, weights=gaps, minlength=len(uniq))
        with np.errstate(invalid="ignore", divide="ignore"):
            taus = tot / n_flips
        tau = dict(zip(uniq, taus))

    agg = pd.DataFrame({"trader_id": aggressor, "v": size}).groupby(
        "trader_id", sort=True)["v"].sum()
    pas = pd.DataFrame({"trader_id": resting, "v": size}).groupby(
        "trader_id", sort=True)["v"].sum()
    active = agg.index.union(pas.index)
    df = pd.DataFrame(index=active)
    df.index.name = "trader_id"
    df["aggressive_volume"] = agg.reindex(active, fill_value=0).astype(np.int64)
    df["passive_volume"] = pas.reindex(active, fill_value=0).astype(np.int64)
    df["tau_s"] = [tau.get(t, np.nan) for t in active]
    length = session.length_s
    df["fast"] = df["tau_s"] < length
    fast_set = set(df.index[df["fast"]])
    is_fast_agg = np.fromiter((a in fast_set for a in aggressor), bool,
                              len(aggressor))
    is_fast_res = np.fromiter((r in fast_set for r in resting), bool,
                              len(resting))
    v_d = int(size.sum())
    v_fast = int(size[is_fast_agg].sum())
    # Inventory diagnostics for every active trader.
    flows = pd.DataFrame({
        "trader_id": np.concatenate([aggressor, resting]),
        "flow": np.concatenate([agg_sign * size, ev.side[fills] * size]),
        "order": np.concatenate([np.arange(len(fills)) * 2,
                                 np.arange(len(fills)) * 2 + 1]),
    }).sort_values(["trader_id", "order"], kind="stable")
    flows["inv"] = flows.groupby("trader_id", sort=False)["flow"].cumsum()
    peak = flows.assign(a=flows["inv"].abs()).groupby("trader_id")["a"].max()
    df["max_abs_inventory"] = peak.reindex(active, fill_value=0).astype(np.int64)
    traded = df["aggressive_volume"] + df["passive_volume"]
    df["inventory_ratio"] = df["max_abs_inventory"] / traded
    return SessionEcology(
        session=session.label, length_s=length, V_D=v_d, V_fast=v_fast,
        V_slow=v_d - v_fast, N_fast=int(df["fast"].sum()), N_D=len(df),
        volume_against_fast=int(size[is_fast_res].sum()), traders=df,
    )


def classify_sessions(sessions, market_only: bool = False,
                      cross_session: bool = False) -> list[SessionEcology]:
    """Classify every session; with ``cross_session`` a trader's reversal
    time pools the flips of all sessions (gaps never span two sessions)."""
    sessions = list(sessions)
    if not cross_session:
        return [classify_session(s, market_only) for s in sessions]
    tot: dict = {}
    cnt: dict = {}
    for s in sessions:
        fc, gaps, uniq = _flip_gaps(s, market_only)
        g = pd.Series(gaps).groupby(fc)
        for code, v in g.sum().items():
            tot[uniq[code]] = tot.get(uniq[code], 0.0) + v
        for code, v in g.size().items():
            cnt[uniq[code]] = cnt.get(uniq[code], 0) + v
    pooled = {k: tot[k] / cnt[k] for k in tot}
    return [classify_session(s, market_only, pooled) for s in sessions]


def inventory_series(trader_id, session: Session) -> pd.DataFrame:
    """Signed cumulative position of one trader, stepping at each fill.

    Aggressive fills count with the market order's side, passive fills
    with the resting order's side.
    """
    ev = session.events
    parent = fill_parents(ev)
    fills = np.flatnonzero(parent >= 0)
    agg = ev.trader_id[parent[fills]] == trader_id
    pas = ev.trader_id[fills] == trader_id
    flow = (np.where(agg, ev.side[parent[fills]], 0)
            + np.where(pas, ev.side[fills], 0)) * ev.size[fills]
    mine = agg | pas
    return pd.DataFrame({"ts_ns": ev.ts[fills][mine],
                         "inventory": np.cumsum(flow[mine])})


def market_maker_ratio(trader_id, session: Session) -> float:
    """``max |I_t|`` over the trader's traded volume in the session."""
    ev = session.events
    parent = fill_parents(ev)
    fills = np.flatnonzero(parent >= 0)
    agg = ev.trader_id[parent[fills]] == trader_id
    pas = ev.trader_id[fills] == trader_id
    traded = ev.size[fills][agg | pas].sum()
    if not traded:
        return float("nan")
    inv = inventory_series(trader_id, session)["inventory"].to_numpy()
    return float(np.max(np.abs(inv)) / traded)


# ---------------------------------------------------------------------------
# Aggregate exports
# ---------------------------------------------------------------------------

SHARE_EDGES = np.linspace(0.0, 1.0, 21)


def participation_histograms(results, edges=SHARE_EDGES) -> pd.DataFrame:
    """Histograms over sessions of the fast volume, count and
    against-fast shares."""
    vol = [r.fast_volume_share for r in results]
    num = [r.fast_count_share for r in results]
    agst = [r.against_fast_share for r in results]
    out = pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:]})
    for name, vals in (("fast_volume_share", vol), ("fast_count_share", num),
                       ("against_fast_share", agst)):
        v = np.asarray(vals, dtype=float)
        out[name] = np.histogram(v[np.isfinite(v)], bins=edges)[0]
    return out


def histogram_mode(hist: pd.DataFrame, column: str) -> tuple[float, float]:
    """``(lo, hi)`` of the most populated bin."""
    k = int(np.argmax(hist[column].to_numpy()))
    return float(hist["bin_lo"].iloc[k]), float(hist["bin_hi"].iloc[k])


def class_summary(results, k_min: int = 5) -> pd.DataFrame:
    """Per-class aggregates over all sessions, suppressing groups with
    fewer than ``k_min`` trader-sessions."""
    frames = [r.traders.assign(session=r.session) for r in results]
    if not frames:
        return pd.DataFrame()
    df = pd.concat(frames)
    df["class"] = np.where(df["fast"], "fast", "slow")
    g = df.groupby("class")
    out = pd.DataFrame({
        "trader_sessions": g.size(),
        "aggressive_volume": g["aggressive_volume"].sum(),
        "passive_volume": g["passive_volume"].sum(),
        "median_tau_s": g["tau_s"].median(),
        "median_inventory_ratio": g["inventory_ratio"].median(),
    })
    small = out["trader_sessions"] < k_min
    out.loc[small, out.columns != "trader_sessions"] = np.nan
    out.loc[small, "trader_sessions"] = np.nan
    return out.reset_index()
