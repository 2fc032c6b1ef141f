"""Liquidity-provider refill sequences and the refill function.

A refill sequence is a maximal run of same-side limit orders of one
provider that got filled, in the order of their first fills.  A limit
order filled in several pieces counts once, at its first-fill price, with
its total filled size.

The refill function of a provider is ``K(i) = E[eps (p_{i+1} - p_i) /
sigma_D]`` where ``p_i`` is the log fill price of the ``i``-th order of a
sequence and ``eps`` the sign of the market orders hitting it (the
opposite of the resting side).  It is fitted as ``C / i**kappa``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .errors import InsufficientData, InsufficientSequences
from .impact import TailFit, fit_power_curve, fit_tail_exponent
from .tape import EXECUTE, SECOND_NS, Session

DEFAULT_MIN_SEQUENCES = 30
DEFAULT_TOP_PROVIDERS = 100


@dataclass
class RefillSequence:
    provider_id: str
    sign: int
    fills: list          # (t_s, q, log_price)
    session: str = ""

    @property
    def n(self) -> int:
        return len(self.fills)


class RefillSet:
    """Sequences (``seqs``) and their filled orders (``orders``) as frames.

    ``seqs`` columns: ``seq, provider, sign, n, volume, session, sigma_D``.
    ``orders`` columns: ``seq, rank, provider, sign, ts_ns, q, logp,
    sigma_D``.
    """

    def __init__(self, seqs: pd.DataFrame, orders: pd.DataFrame):
        self.seqs = seqs
        self.orders = orders

    def __len__(self) -> int:
        return len(self.seqs)

    @classmethod
    def concat(cls, sets) -> "RefillSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return extract_refill_sequences(None)
        seqs, orders, off = [], [], 0
        for s in sets:
            seqs.append(s.seqs.assign(seq=s.seqs["seq"] + off))
            orders.append(s.orders.assign(seq=s.orders["seq"] + off))
            off += len(s.seqs)
        return cls(pd.concat(seqs, ignore_index=True),
                   pd.concat(orders, ignore_index=True))

    def sequence(self, k: int) -> RefillSequence:
        row = self.seqs.iloc[k]
        o = self.orders[self.orders["seq"] == row["seq"]]
        fills = list(zip(o["ts_ns"] / SECOND_NS, o["q"], o["logp"]))
        return RefillSequence(row["provider"], int(row["sign"]), fills,
                              row["session"])

    def lengths(self) -> np.ndarray:
        return self.seqs["n"].to_numpy()


def extract_refill_sequences(session: Session | None) -> RefillSet:
    """Per-provider side runs of filled limit orders in one session."""
    empty_seqs = pd.DataFrame({"seq": pd.Series(dtype=np.int64),
                               "provider": pd.Series(dtype=object),
                               "sign": pd.Series(dtype=np.int64),
                               "n": pd.Series(dtype=np.int64),
                               "volume": pd.Series(dtype=np.int64),
                               "session": pd.Series(dtype=object),
                               "sigma_D": pd.Series(dtype=float)})
    empty_orders = pd.DataFrame({c: pd.Series(dtype=t) for c, t in
                                 (("seq", np.int64), ("rank", np.int64),
                                  ("provider", object), ("sign", np.int64),
                                  ("ts_ns", np.int64), ("q", np.int64),
                                  ("logp", float), ("sigma_D", float))})
    if session is None:
        return RefillSet(empty_seqs, empty_orders)
    ev = session.events
    rows = np.flatnonzero(ev.event == EXECUTE)
    if not len(rows):
        return RefillSet(empty_seqs, empty_orders)
    fills = pd.DataFrame({"order_id": ev.order_id[rows],
                          "provider": ev.trader_id[rows],
                          "sign": ev.side[rows].astype(np.int64),
                          "ts_ns": ev.ts[rows], "price": ev.price[rows],
                          "q": ev.size[rows], "row": rows})
    g = fills.groupby(["provider", "order_id"], sort=False)
    orders = g.agg(sign=("sign", "first"), ts_ns=("ts_ns", "first"),
                   price=("price", "first"), q=("q", "sum"),
                   row=("row", "first")).reset_index()
    orders = orders.sort_values(["provider", "row"], kind="stable")
    prov = orders["provider"].to_numpy()
    sign = orders["sign"].to_numpy()
    new = np.ones(len(orders), dtype=bool)
    new[1:] = (prov[1:] != prov[:-1]) | (sign[1:] != sign[:-1])
    seq_id = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    rank = np.arange(len(orders)) - np.repeat(starts, np.diff(np.append(starts, len(orders)))) + 1
    orders = orders.assign(seq=seq_id, rank=rank,
                           logp=np.log(orders["price"].to_numpy(dtype=float)),
                           sigma_D=session.sigma_D)
    # Number sequences by the time of their first fill.
    first_row = orders.groupby("seq")["row"].min().to_numpy()
    renum = np.empty_like(first_row)
    renum[np.argsort(first_row, kind="stable")] = np.arange(len(first_row))
    orders["seq"] = renum[orders["seq"].to_numpy()]
    orders = orders.sort_values(["seq", "rank"], kind="stable")
    seqs = orders.groupby("seq", sort=True).agg(
        provider=("provider", "first"), sign=("sign", "first"),
        n=("rank", "size"), volume=("q", "sum")).reset_index()
    seqs["session"] = session.label
    seqs["sigma_D"] = session.sigma_D
    return RefillSet(seqs[empty_seqs.columns].reset_index(drop=True),
                     orders[empty_orders.columns].reset_index(drop=True))


def extract_all(sessions) -> RefillSet:
    return RefillSet.concat([extract_refill_sequences(s) for s in sessions])


# ---------------------------------------------------------------------------
# Length distribution
# ---------------------------------------------------------------------------

@dataclass
class LengthDistribution:
    hist: pd.DataFrame
    tail: TailFit


def length_distribution(rs, min_tail: int = 100) -> LengthDistribution:
    """Histogram of sequence lengths and its discrete power-law tail."""
    n = rs.lengths() if isinstance(rs, RefillSet) else np.asarray(rs)
    values, counts = np.unique(n, return_counts=True)
    hist = pd.DataFrame({"n": values, "count": counts,
                         "psi": counts / counts.sum() if counts.size else counts})
    return LengthDistribution(hist, fit_tail_exponent(n, min_tail=min_tail))


# ---------------------------------------------------------------------------
# Refill function
# ---------------------------------------------------------------------------

@dataclass
class RefillFit:
    provider_id: str
    C: float
    kappa: float
    n_sequences: int
    liq_share: float
    C_se: float = float("nan")
    kappa_se: float = float("nan")
    profile: pd.DataFrame | None = None

    @property
    def style(self) -> str:
        return "wary" if self.C >= 0.02 else "aggressive"


def refill_values(rs: RefillSet) -> pd.DataFrame:
    """``eps (p_{i+1} - p_i) / sigma_D`` for every consecutive pair."""
    o = rs.orders
    same = o["seq"].to_numpy()[1:] == o["seq"].to_numpy()[:-1]
    dp = np.diff(o["logp"].to_numpy())
    eps = -o["sign"].to_numpy()[:-1]
    val = eps * dp / o["sigma_D"].to_numpy()[:-1]
    pairs = pd.DataFrame({"provider": o["provider"].to_numpy()[:-1],
                          "seq": o["seq"].to_numpy()[:-1],
                          "i": o["rank"].to_numpy()[:-1], "value": val})
    return pairs[same & np.isfinite(val)].reset_index(drop=True)


def refill_profile(values: pd.DataFrame, i_max: int | None = None) -> pd.DataFrame:
    g = values.groupby("i")["value"]
    prof = pd.DataFrame({"mean": g.mean(), "se": g.sem(), "count": g.size()})
    prof.index.name = "i"
    prof = prof.reset_index()
    if i_max is not None:
        prof = prof[prof["i"] <= i_max]
    return prof


def fit_refill(i, K, se=None, method: str = "nls"):
    """``(C, kappa, C_se, kappa_se)`` for ``K(i) = C / i**kappa``.

    ``method="loglog"`` is a weighted log-log regression (ranks with
    ``K <= 0`` dropped); ``"nls"`` refines it by weighted least squares in
    linear space, which keeps ranks whose sample mean is not positive.
    """
    i = np.asarray(i, dtype=float)
    K = np.asarray(K, dtype=float)
    try:
        pf = fit_power_curve(i, K, se)
        C0, k0 = pf.prefactor, -pf.exponent
        C_se, k_se = pf.prefactor_se, pf.exponent_se
    except InsufficientData:
        if method == "loglog":
            raise
        C0, k0, C_se, k_se = float(np.mean(K)), 0.5, np.nan, np.nan
    if method == "loglog":
        return C0, k0, C_se, k_se
    w = np.ones_like(K)
    if se is not None:
        s = np.asarray(se, dtype=float)
        if np.all(np.isfinite(s)) and np.all(s > 0):
            w = 1.0 / s
    res = optimize.least_squares(lambda p: (p[0] * i ** -p[1] - K) * w,
                                 [C0, k0], method="lm", xtol=1e-14,
                                 ftol=1e-14, gtol=1e-14, max_nfev=10000)
    C, kappa = res.x
    cov = np.linalg.pinv(res.jac.T @ res.jac)
    if se is None:
        cov = cov * 2 * res.cost / max(len(K) - 2, 1)
    return float(C), float(kappa), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1]))


def refill_function(rs: RefillSet, provider_id, min_sequences: int =
                    DEFAULT_MIN_SEQUENCES, min_rank_count: int = 5,
                    i_max: int | None = None, method: str = "nls",
                    liq_share: float = float("nan")) -> RefillFit:
    """``K(i)`` of one provider, conditioned on sequences with ``n >= i+1``."""
    seqs = rs.seqs[(rs.seqs["provider"] == provider_id) & (rs.seqs["n"] >= 2)]
    if len(seqs) < min_sequences:
        raise InsufficientSequences(
            f"provider has {len(seqs)} sequences with n >= 2; need "
            f"{min_sequences}")
    vals = refill_values(rs)
    vals = vals[vals["provider"] == provider_id]
    prof = refill_profile(vals, i_max)
    use = prof[prof["count"] >= min_rank_count]
    if len(use) < 2:
        raise InsufficientSequences("fewer than two populated ranks")
    se = use["se"].to_numpy()
    C, kappa, C_se, k_se = fit_refill(use["i"], use["mean"],
                                      se if np.all(se > 0) else None, method)
    return RefillFit(str(provider_id), C, kappa, int(len(seqs)), liq_share,
                     C_se, k_se, prof)


def provider_shares(rs: RefillSet) -> pd.Series:
    vol = rs.seqs.groupby("provider")["volume"].sum()
    return vol / vol.sum()


def fit_providers(rs: RefillSet, top: int = DEFAULT_TOP_PROVIDERS,
                  min_sequences: int = DEFAULT_MIN_SEQUENCES,
                  method: str = "nls") -> list[RefillFit]:
    """Refill fits for the ``top`` providers with most filled orders;
    providers without enough sequences are skipped."""
    shares = provider_shares(rs)
    activity = rs.seqs.groupby("provider")["n"].sum()
    ranked = activity.sort_values(ascending=False, kind="stable")
    # Stable tie-break on the provider id.
    ranked = ranked.reset_index().sort_values(["n", "provider"],
                                              ascending=[False, True])
    fits = []
    for p in ranked["provider"].iloc[:top]:
        try:
            fits.append(refill_function(rs, p, min_sequences, method=method,
                                        liq_share=float(shares[p])))
        except InsufficientSequences:
            continue
    return fits


def liquidity_share_vs_C(fits, smooth: bool = True) -> pd.DataFrame:
    """Provided-liquidity share against ``C``, sorted by ``C``.

    With ``smooth`` consecutive pairs are averaged (an odd last point is
    dropped), so no single provider can be read off the result.
    """
    df = pd.DataFrame({"C": [f.C for f in fits],
                       "liq_share": [f.liq_share for f in fits]})
    df = df.sort_values("C", kind="stable").reset_index(drop=True)
    if smooth:
        m = len(df) // 2 * 2
        df = df.iloc[:m].groupby(np.arange(m) // 2).mean().reset_index(drop=True)
    return df


def share_rank_correlation(fits) -> float:
    C = [f.C for f in fits]
    s = [f.liq_share for f in fits]
    return float(stats.spearmanr(C, s).statistic)


def provider_hash(provider_id, salt: str) -> str:
    return hashlib.sha256(f"{salt}:{provider_id}".encode()).hexdigest()[:16]


def fits_frame(fits, salt: str) -> pd.DataFrame:
    return pd.DataFrame({
        "provider_hash": [provider_hash(f.provider_id, salt) for f in fits],
        "C": [f.C for f in fits], "kappa": [f.kappa for f in fits],
        "n_sequences": [f.n_sequences for f in fits],
        "liq_share": [f.liq_share for f in fits],
    })
