"""Seeded tape generator with a known ground truth.

Each session is generated independently from ``SeedSequence([seed, k])``.

Price.  The log mid relative to the opening price is

    F(t) = W(t) + sum_j eps_j G0 sqrt(q_j) (dt_j / (t - t_j + i0 dt_j))**beta

over market orders ``j`` sent before ``t``, where ``dt_j`` is the nominal
child spacing of the run the order belongs to and ``W`` an independent
random walk whose variance rate follows a U-shaped intraday profile.
Quotes only change when a market order arrives: the ``M`` row refreshes
them from ``F`` just before the order.  An order no larger than the
opposite best size leaves prices untouched (the level shrinks); a larger
one sweeps the level and the quotes are refreshed from ``F`` just after
it.  Every other row carries the latest quotes.

Agents.

* slow takers: one metaorder per session, sizes from a discrete power
  law, about ``n_children`` children spaced by a size-dependent interval;
* fast takers: alternating-sign metaorders all session long, separated by
  short gaps, so they reverse well within a session;
* scripted providers: rest on one side for a Zipf-distributed number of
  fills, then switch sides; their successive fill prices degrade by
  ``C sigma_D / i**kappa``;
* one-sided providers: always available on their side; they also absorb
  the part of a sweep beyond the best level, at ``sqrt(2 q / gamma)``
  ticks from the mid (the latent-liquidity distance);
* a market maker always quoting on the side that unwinds its inventory;
* background traders whose limit orders are all cancelled.

The ledger records every metaorder, agent labels, provider runs, the
noiseless impact path and per-bin executed volumes.
"""

from __future__ import annotations

import datetime as _dt
import functools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd
from scipy import special

from .errors import ConfigError
from .tape import (
    CANCEL, EXECUTE, LIMIT, MARKET, MINUTE_NS, SECOND_NS, RAW_WINDOWS, Session,
    StockMeta, Tape, TapeWriter, session_stats, session_window, write_meta,
)

SESSION_S = 130 * 60


# ---------------------------------------------------------------------------
# Discrete power law sampling
# ---------------------------------------------------------------------------

def discrete_power_law_sf(n, alpha: float, x_min: int):
    """``P(X >= n)`` for ``P(X = k) ~ k**-alpha``, ``k >= x_min``."""
    return special.zeta(alpha, np.asarray(n, dtype=float)) / special.zeta(alpha, x_min)


_TABLE_MAX = 1 << 16


@functools.lru_cache(maxsize=64)
def _sf_table(alpha: float, x_min: int, x_max: int | None) -> np.ndarray:
    """Survival function on ``x_min .. min(x_max, x_min + TABLE_MAX) + 1``."""
    top = x_min + _TABLE_MAX if x_max is None else min(x_max, x_min + _TABLE_MAX)
    return discrete_power_law_sf(np.arange(x_min, top + 2), alpha, x_min)


def _bisect_sf(u, lo, hi, alpha, x_min):
    # Invariant: sf(lo) >= u > sf(hi).
    while True:
        gap = hi - lo > 1
        if not gap.any():
            return lo
        mid = (lo + hi) // 2
        ok = discrete_power_law_sf(mid, alpha, x_min) >= u
        lo = np.where(gap & ok, mid, lo)
        hi = np.where(gap & ~ok, mid, hi)


def sample_discrete_power_law(rng: np.random.Generator, alpha: float,
                              x_min: int = 1, size=None,
                              x_max: int | None = None) -> np.ndarray:
    """Inverse-CDF draws from a discrete power law, optionally truncated.

    ``X`` is the largest ``n`` with ``P(X >= n) >= u``: a table lookup for
    the body, bisection on the Hurwitz-zeta survival function in the tail.
    """
    if alpha <= 1:
        raise ConfigError("power-law exponent must exceed 1")
    u = 1.0 - rng.random(size)      # (0, 1]
    lo_sf = 0.0
    if x_max is not None:
        lo_sf = float(discrete_power_law_sf(x_max + 1, alpha, x_min))
    u = np.atleast_1d(lo_sf + (1.0 - lo_sf) * u)
    table = _sf_table(float(alpha), int(x_min),
                      None if x_max is None else int(x_max))
    # table is decreasing; count entries >= u.
    k = np.searchsorted(-table, -u, side="right")
    out = (x_min + k - 1).astype(np.int64)
    tail = k >= len(table)
    if tail.any():
        lo = np.full(int(tail.sum()), x_min + len(table) - 1, dtype=np.int64)
        if x_max is not None:
            hi = np.full(lo.shape, x_max + 1, dtype=np.int64)
        else:
            hi = lo * 2 + 1
            while True:
                bad = discrete_power_law_sf(hi, alpha, x_min) >= u[tail]
                if not bad.any() or np.all(hi[bad] >= 2 ** 52):
                    break
                hi[bad] = np.minimum(hi[bad] * 2 + 1, 2 ** 52)
        out[tail] = _bisect_sf(u[tail], lo, hi, alpha, x_min)
    return out if size is not None else out[0]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ProviderSpec:
    """A liquidity provider.

    ``mu_p`` set: scripted provider with Zipf(``mu_p``) run lengths capped
    at ``max_run``, starting on a random side.  ``mu_p`` None and
    ``side != 0``: one-sided provider.  ``mu_p`` None and ``side = 0``:
    market maker, resting on whichever side unwinds its inventory.
    """

    name: str
    C: float = 0.0
    kappa: float = 0.5
    weight: float = 1.0
    mu_p: float | None = 2.0
    side: int = 0
    max_run: int = 1000
    price_noise: float = 0.0

    @property
    def kind(self) -> str:
        if self.mu_p is not None:
            return "provider"
        if self.side != 0:
            return "one_sided"
        return "market_maker"


@dataclass
class SimConfig:
    seed: int = 0
    stock_id: str = "SIM"
    start_date: str = "2024-01-04"
    n_sessions: int = 10
    p0_ticks: int = 5_000_000
    tick_size: float = 0.1
    lot: int = 100
    volume_target: int = 4_000_000
    # propagator ground truth
    G0: float = 1.5e-5
    i0: float = 4.0
    beta: float = 0.5
    noise_vol: float = 0.004
    noise_u_shape: float = 0.5
    gamma: float = 0.1
    best_size_lots: int = 4
    sweep_to_latent: bool = False
    # slow takers
    n_slow: int = 330
    slow_pool: int = 600
    slow_f_min: float = 1e-3
    slow_alpha: float = 2.5
    f_max: float = 0.1
    start_shape: float = 0.7
    # fast takers
    n_fast: int = 20
    fast_runs: int = 9
    fast_f_min: float = 1e-3
    fast_alpha: float = 2.5
    fast_gap_s: float = 30.0
    # children
    n_children: int = 10
    n_knee: float = 0.01
    n_slope: float = 0.3
    n_children_max: int | None = None
    dt_ref_s: float = 25.0
    dt_f_ref: float = 1e-4
    dt_slope: float = 0.39
    dt_max_s: float = 150.0
    dt_jitter: float = 0.2
    spacing_jitter: float = 0.1
    heterogeneous_children: bool = False
    # providers
    providers: list = field(default_factory=list)
    # slow passive traders: one-sided providers sharing ``passive_weight``
    n_passive: int = 0
    passive_weight: float = 0.0
    # background
    n_background: int = 40
    bg_rate: float = 0.5
    bg_cancel_s: float = 60.0
    edge_noise: bool = False

    def __post_init__(self):
        self.providers = [p if isinstance(p, ProviderSpec) else ProviderSpec(**p)
                          for p in self.providers]
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n_sessions >= 1, "n_sessions must be >= 1")
        need(self.p0_ticks >= 1000, "p0_ticks must be >= 1000")
        need(self.lot >= 1 and self.volume_target > 0, "volumes must be positive")
        need(self.G0 >= 0 and self.i0 >= 0, "G0 and i0 must be non-negative")
        need(0 < self.beta < 1, "beta must lie in (0, 1)")
        need(self.noise_vol >= 0, "noise_vol must be non-negative")
        need(-0.5 <= self.noise_u_shape <= 1.0, "noise_u_shape must lie in [-0.5, 1]")
        need(self.gamma > 0, "gamma must be positive")
        need(self.best_size_lots >= 1, "best_size_lots must be >= 1")
        need(0 <= self.n_slow <= self.slow_pool, "n_slow must not exceed slow_pool")
        need(self.n_fast >= 0 and self.fast_runs >= 1, "fast taker counts invalid")
        need(self.slow_alpha > 1 and self.fast_alpha > 1, "size exponents must exceed 1")
        need(0 < self.slow_f_min < self.f_max <= 1, "f bounds invalid")
        need(0 < self.fast_f_min < self.f_max, "f bounds invalid")
        need(self.n_children >= 1, "n_children must be >= 1")
        need(self.dt_ref_s > 0 and self.dt_max_s > 0, "spacings must be positive")
        need(0 <= self.spacing_jitter < 0.5, "spacing_jitter must lie in [0, 0.5)")
        need(self.start_shape > 0, "start_shape must be positive")
        need(self.bg_rate >= 0 and self.n_background >= 1, "background invalid")
        sides = {p.side for p in self.providers if p.kind == "one_sided"}
        need(self.n_slow + self.n_fast == 0 or {1, -1} <= sides,
             "need a one-sided provider on each side")
        for p in self.providers:
            need(p.weight >= 0, "provider weights must be non-negative")
            need(p.mu_p is None or p.mu_p > 1, "mu_p must exceed 1")
            need(p.max_run >= 1, "max_run must be >= 1")
        need(self.n_passive >= 0 and self.passive_weight >= 0,
             "passive traders invalid")
        names = [p.name for p in self.all_providers()]
        need(len(set(names)) == len(names), "provider names must be unique")

    def all_providers(self) -> list[ProviderSpec]:
        """Configured providers followed by the slow passive traders."""
        extra = [ProviderSpec(f"SP{k:03d}", weight=self.passive_weight / self.n_passive,
                              mu_p=None, side=1 if k % 2 == 0 else -1)
                 for k in range(self.n_passive)]
        return list(self.providers) + extra

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        return cls.from_dict(json.loads(text))

    def session_dates(self) -> list[tuple[_dt.date, str]]:
        out = []
        day = _dt.date.fromisoformat(self.start_date)
        while len(out) < self.n_sessions:
            if day.weekday() < 5:
                for half in ("AM", "PM"):
                    if len(out) < self.n_sessions:
                        out.append((day, half))
            day += _dt.timedelta(days=1)
        return out


def default_providers() -> list[ProviderSpec]:
    return [
        ProviderSpec("P01", C=0.005, kappa=1.2, weight=6.0, mu_p=1.9),
        ProviderSpec("P02", C=0.008, kappa=1.0, weight=5.0, mu_p=2.0),
        ProviderSpec("P03", C=0.01, kappa=1.0, weight=4.0, mu_p=2.0),
        ProviderSpec("P04", C=0.015, kappa=0.8, weight=3.0, mu_p=2.1),
        ProviderSpec("P05", C=0.02, kappa=0.6, weight=2.0, mu_p=2.0),
        ProviderSpec("P06", C=0.03, kappa=0.5, weight=1.5, mu_p=1.8),
        ProviderSpec("P07", C=0.05, kappa=0.5, weight=1.0, mu_p=2.0),
        ProviderSpec("P08", C=0.08, kappa=0.5, weight=0.7, mu_p=2.2),
        ProviderSpec("MM", weight=3.0, mu_p=None, side=0),
        ProviderSpec("LB1", weight=2.5, mu_p=None, side=1),
        ProviderSpec("LA1", weight=2.5, mu_p=None, side=-1),
        ProviderSpec("LB2", weight=1.1, mu_p=None, side=1),
        ProviderSpec("LA2", weight=1.1, mu_p=None, side=-1),
    ]


def preset_paper_like(seed: int = 0, n_sessions: int = 400) -> SimConfig:
    """A liquid large-cap stock: f mode between 0.1% and 1%, ten children
    per metaorder, spacing growing from 25 s to 150 s with f, best-quote
    size near 1e-4 of daily volume and a majority of volume from fast
    traders.

    Every child sweeps the best level, so all of them move the mid.  The
    random walk dominates the daily range; a range made mostly of flow
    would shrink with the metaorders it is meant to normalise.
    """
    return SimConfig(
        seed=seed, n_sessions=n_sessions, best_size_lots=3,
        n_slow=320, slow_f_min=1.5e-3, start_shape=1.0,
        n_fast=36, fast_runs=14, fast_f_min=2.4e-3, fast_alpha=2.2,
        fast_gap_s=300.0, n_slope=0.0, noise_vol=0.05, n_passive=150,
        passive_weight=3.0, providers=default_providers())


def preset_child_profile(seed: int = 0, n_sessions: int = 4000) -> SimConfig:
    """One short, centred metaorder per session, for the child profile.

    ``sigma_D`` is a range, so any flow it contains couples the
    normalisation to the metaorder's own path and bends the averaged
    profile.  Here the random walk dominates the range, with its variance
    pushed to the session edges (``noise_u_shape=1``), while each metaorder
    runs its 60 children 5 s apart in the quiet middle of the session.
    The kernel only depends on lags in units of the spacing, so the short
    spacing leaves the profile's shape unchanged.
    """
    return SimConfig(
        seed=seed, n_sessions=n_sessions, n_slow=1, slow_pool=10,
        slow_f_min=2e-3, slow_alpha=4.0, f_max=0.01, start_shape=200.0,
        n_fast=0, n_children=60, n_knee=1.0, n_slope=0.0, dt_ref_s=5.0,
        dt_slope=0.0, dt_max_s=5.0, dt_jitter=0.1, noise_vol=0.02,
        noise_u_shape=1.0, n_background=5, providers=default_providers())


def preset_single_mo(seed: int = 0, n_sessions: int = 40) -> SimConfig:
    """Paper-like flow with a deeper best level, so that a good share of
    child orders leaves the mid unchanged on impact.

    Prices are flow dominated and the noise has no intraday shape, which
    keeps ``sigma_b / sqrt(V_b)`` the same in every 15-minute bin; the
    volume-time rescaling then cannot tilt the single-order curve.
    """
    cfg = preset_paper_like(seed, n_sessions)
    cfg.best_size_lots = 20
    cfg.noise_vol = 0.004
    cfg.noise_u_shape = 0.0
    return cfg


def preset_refill(seed: int = 0, n_sessions: int = 20,
                  mu_p: float = 2.0) -> SimConfig:
    """Three scripted providers with contrasting refill functions and a
    given run-length exponent, over one-sided background liquidity.

    The background providers never leave their side, so each session holds
    one long sequence of theirs; their refill function is flat (``C = 0``)
    and they supply the largest share of liquidity.
    """
    provs = [
        ProviderSpec("WARY", C=0.05, kappa=0.5, weight=1.0, mu_p=mu_p, max_run=400),
        ProviderSpec("AGGR", C=0.01, kappa=1.0, weight=3.0, mu_p=mu_p, max_run=400),
        ProviderSpec("MID", C=0.02, kappa=0.7, weight=2.0, mu_p=mu_p, max_run=400),
        ProviderSpec("LB1", weight=1.5, mu_p=None, side=1),
        ProviderSpec("LA1", weight=1.5, mu_p=None, side=-1),
    ]
    return SimConfig(seed=seed, n_sessions=n_sessions, providers=provs)


def preset_perf(seed: int = 0, n_events: int = 10_000_000,
                n_sessions: int = 20) -> SimConfig:
    """Background-heavy configuration with ``n_events`` rows, give or take
    a few tenths of a percent."""
    base = SimConfig(seed=seed, n_sessions=n_sessions, n_slow=40, slow_pool=80,
                     n_fast=4, fast_runs=4, providers=default_providers())
    per = n_events / n_sessions
    # Each background order yields an L row and usually a C row.
    base.bg_rate = max(per - 1_500, 0) / (2 * SESSION_S)
    return base


PRESETS = {
    "paper-like": preset_paper_like,
    "child-profile": preset_child_profile,
    "single-mo": preset_single_mo,
    "refill": preset_refill,
    "perf": preset_perf,
}


# ---------------------------------------------------------------------------
# Ground-truth ledger
# ---------------------------------------------------------------------------

@dataclass
class GroundTruthLedger:
    """Generator-side record of what was simulated, one frame per table.

    ``metaorders``: session, trader_id, kind, sign, N, Q, start_ts, end_ts,
    own_impact (noiseless impact of the metaorder's own children over its
    window, signed by its direction), own_flow_impact (the same for every
    order of the trader, so it also holds the relaxation of the trader's
    earlier metaorders), f (``Q / V_D``), sigma_D.
    ``children``: metaorder (row in ``metaorders``), ts_ns, q, depleted.
    ``agents``: session, trader_id, kind, fast, fast_kind, tau_s.
    ``runs``: session, provider, side, n, complete.
    ``path``: session, ts_ns, sign, q, impact_before, impact_after.
    ``volume_bins``: session, half, bin, volume.
    ``sessions``: session, V_D, sigma_D.
    """

    metaorders: pd.DataFrame
    children: pd.DataFrame
    agents: pd.DataFrame
    runs: pd.DataFrame
    path: pd.DataFrame
    volume_bins: pd.DataFrame
    sessions: pd.DataFrame
    config: dict = field(default_factory=dict)

    TABLES = ("metaorders", "children", "agents", "runs", "path",
              "volume_bins", "sessions")

    @classmethod
    def concat(cls, parts) -> "GroundTruthLedger":
        parts = list(parts)
        out = {}
        for t in cls.TABLES:
            frames = [getattr(p, t) for p in parts]
            if t == "children":
                off = np.cumsum([0] + [len(p.metaorders) for p in parts])[:-1]
                frames = [f.assign(metaorder=f["metaorder"] + o)
                          for f, o in zip(frames, off)]
            out[t] = pd.concat(frames, ignore_index=True)
        return cls(**out, config=parts[0].config if parts else {})

    def to_json(self) -> str:
        payload = {"config": self.config}
        for t in self.TABLES:
            df = getattr(self, t)
            payload[t] = {c: df[c].tolist() for c in df.columns}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthLedger":
        d = json.loads(text)
        return cls(**{t: pd.DataFrame(d[t]) for t in cls.TABLES},
                   config=d.get("config", {}))

    def write(self, path) -> None:
        from ._io import atomic_write_text

        atomic_write_text(path, self.to_json())

    @classmethod
    def read(cls, path) -> "GroundTruthLedger":
        return cls.from_json(Path(path).read_text())

    def labels(self, session: str | None = None) -> pd.DataFrame:
        a = self.agents
        return a if session is None else a[a["session"] == session]


def ground_truth_curve(ledger: GroundTruthLedger, edges=None,
                       min_bin_count: int = 50, column: str = "own_flow_impact"):
    """The binned impact curve of a noiseless ledger impact column, fitted
    like the measured one.  ``own_flow_impact`` is what the measured price
    change estimates without bias, since all other order flow has a sign
    independent of the metaorder's."""
    from .impact import binned_curve

    m = ledger.metaorders
    y = (m[column] / m["sigma_D"]).to_numpy()
    return binned_curve(m["f"].to_numpy(), y, edges, min_bin_count,
                        label="ground_truth")


def ledger_mismatches(ms, ledger: GroundTruthLedger) -> int:
    """Count metaorders present on one side only, comparing (session,
    trader, sign, N, Q, start_ts, end_ts)."""
    keys = ["session", "trader_id", "sign", "N", "Q", "start_ts", "end_ts"]
    a = pd.DataFrame({"session": ms.session, "trader_id": ms.trader_id,
                      "sign": ms.sign, "N": ms.N, "Q": ms.Q,
                      "start_ts": ms.start_ts, "end_ts": ms.end_ts})
    b = ledger.metaorders[keys].copy()
    for df in (a, b):
        for c in ("sign", "N", "Q", "start_ts", "end_ts"):
            df[c] = df[c].astype(np.int64)
        df["trader_id"] = df["trader_id"].astype(str)
        df["session"] = df["session"].astype(str)
    merged = a.merge(b, on=keys, how="outer", indicator=True)
    return int((merged["_merge"] != "both").sum())


# ---------------------------------------------------------------------------
# Session generation
# ---------------------------------------------------------------------------

def _noise_cum(x, a):
    """Integral over [0, x] of the normalized U profile ``1 + a(12(s-1/2)^2 - 1)``."""
    x = np.asarray(x, dtype=float)
    return x + a * (4.0 * (x - 0.5) ** 3 + 0.5 - x)


def _impact_before(t, amp, kdt, i0, beta) -> np.ndarray:
    """``sum_{j<k} amp_j (kdt_j / (t_k - t_j + i0 kdt_j))**beta``."""
    M = len(t)
    out = np.zeros(M)
    if M < 2:
        return out
    block = max(1, min(M, 2_000_000 // M))
    c = i0 * kdt - t
    for a in range(0, M, block):
        b = min(M, a + block)
        # Rows a..b-1 against columns 0..b-1; the strictly upper part of
        # the diagonal block is masked out through its weights.
        base = kdt[None, :b] / np.maximum(t[a:b, None] + c[None, :b],
                                          1e-300)
        k = np.sqrt(base, out=base) if beta == 0.5 else \
            np.power(base, beta, out=base)
        k[:, a:b][np.arange(b - a)[:, None] <= np.arange(b - a)[None, :]] = 0.0
        out[a:b] = k @ amp[:b]
    return out


def _n_children(cfg: SimConfig, f):
    n = cfg.n_children * np.maximum(1.0, f / cfg.n_knee) ** cfg.n_slope
    n = np.maximum(1, np.rint(n)).astype(np.int64)
    if cfg.n_children_max is not None:
        n = np.minimum(n, cfg.n_children_max)
    return n


def _spacing(cfg: SimConfig, f, rng):
    dt = cfg.dt_ref_s * (f / cfg.dt_f_ref) ** cfg.dt_slope
    dt = np.minimum(dt, cfg.dt_max_s)
    return dt * np.exp(cfg.dt_jitter * rng.standard_normal(np.shape(f)))


@dataclass
class _Run:
    trader: str
    kind: str
    sign: int
    t: np.ndarray      # child times, seconds since session start
    q: np.ndarray      # child sizes, shares
    dt: float          # nominal spacing


def _draw_sizes(cfg, rng, f_min, alpha, V, size) -> np.ndarray:
    """Metaorder sizes in lots."""
    x_min = max(1, int(np.ceil(f_min * V / cfg.lot)))
    x_max = max(x_min, int(cfg.f_max * V / cfg.lot))
    return sample_discrete_power_law(rng, alpha, x_min, size=size, x_max=x_max)


def _metaorder_children(cfg, rng, q_lots, V):
    lot = cfg.lot
    q_lots = int(q_lots)
    f = q_lots * lot / V
    n = int(min(_n_children(cfg, np.array([f]))[0], q_lots))
    if cfg.heterogeneous_children and n > 1:
        cuts = np.sort(rng.choice(np.arange(1, q_lots), n - 1, replace=False))
        sizes = np.diff(np.concatenate([[0], cuts, [q_lots]]))
    else:
        per = q_lots // n
        sizes = np.full(n, per)
    dt = float(_spacing(cfg, np.array([f]), rng)[0])
    return sizes.astype(np.int64) * lot, dt


def _child_times(cfg, rng, n, dt, t_start):
    k = np.arange(n, dtype=float)
    jit = cfg.spacing_jitter * (2 * rng.random(n) - 1)
    jit[0] = 0.0
    return t_start + dt * (k + jit)


def _plan_takers(cfg: SimConfig, rng, V, L) -> list[_Run]:
    runs = []
    margin = 1.0
    ids = rng.choice(cfg.slow_pool, cfg.n_slow, replace=False)
    q_slow = _draw_sizes(cfg, rng, cfg.slow_f_min, cfg.slow_alpha, V,
                         cfg.n_slow)
    q_fast = _draw_sizes(cfg, rng, cfg.fast_f_min, cfg.fast_alpha, V,
                         (cfg.n_fast, cfg.fast_runs))
    for tid, q in zip(ids, q_slow):
        sizes, dt = _metaorder_children(cfg, rng, q, V)
        n = len(sizes)
        if n > 1 and (n - 1) * dt > 0.9 * L:
            dt = 0.9 * L / (n - 1)
        T = (n - 1) * dt * (1 + cfg.spacing_jitter)
        room = max(L - T - 2 * margin, 0.0)
        t0 = margin + room * rng.beta(cfg.start_shape, cfg.start_shape)
        sign = 1 if rng.random() < 0.5 else -1
        runs.append(_Run(f"S{tid:04d}", "slow_taker", sign,
                         _child_times(cfg, rng, n, dt, t0), sizes, dt))
    for k in range(cfg.n_fast):
        tid = f"F{k:03d}"
        sign = 1 if rng.random() < 0.5 else -1
        t = margin + cfg.fast_gap_s * rng.random()
        for q in q_fast[k]:
            sizes, dt = _metaorder_children(cfg, rng, q, V)
            n = len(sizes)
            if n > 1 and (n - 1) * dt > 0.25 * L:
                dt = 0.25 * L / (n - 1)
            times = _child_times(cfg, rng, n, dt, t)
            if times[-1] > L - margin:
                break
            runs.append(_Run(tid, "fast_taker", sign, times, sizes, dt))
            t = times[-1] + cfg.fast_gap_s * (0.5 + rng.random())
            sign = -sign
    return runs


class _ProviderBook:
    """Side and run state of every provider during a session.

    One-sided providers never move, so their cumulative weights per side
    are fixed; only the flipping providers are scanned at each pick.
    """

    _BATCH = 4096

    def __init__(self, specs, rng):
        self.specs = list(specs)
        self.rng = rng
        n = len(self.specs)
        self.side = [0] * n
        self.left = [0] * n
        self.count = [0] * n
        self.weight = [float(p.weight) for p in self.specs]
        self.runs = []       # (provider index, side, n, complete)
        self.one_sided = [p.kind == "one_sided" for p in self.specs]
        self.mm = [p.kind == "market_maker" for p in self.specs]
        self.inv = [0] * n
        self.flipping = [k for k in range(n) if not self.one_sided[k]]
        self._pool = {k: [] for k in self.flipping}
        self.fixed = {}
        for sd in (1, -1):
            idx = np.array([k for k, p in enumerate(self.specs)
                            if p.kind == "one_sided" and p.side == sd],
                           dtype=np.int64)
            w = np.array([self.weight[k] for k in idx], dtype=float)
            self.fixed[sd] = (idx, np.cumsum(w), np.cumsum(np.ones(len(idx))))
        self._u = np.empty(0)
        self._pos = 0
        for k in self.flipping:
            self.side[k] = 1 if rng.random() < 0.5 else -1
            self.left[k] = self._draw_run(k)
        for k, p in enumerate(self.specs):
            if p.kind == "one_sided":
                self.side[k] = p.side

    def _draw_run(self, k: int) -> int:
        p = self.specs[k]
        if p.mu_p is None:
            return p.max_run
        pool = self._pool[k]
        if not pool:
            pool.extend(sample_discrete_power_law(
                self.rng, p.mu_p, 1, size=64, x_max=p.max_run)[::-1].tolist())
        return pool.pop()

    def _uniform(self) -> float:
        if self._pos >= len(self._u):
            self._u = self.rng.random(self._BATCH)
            self._pos = 0
        self._pos += 1
        return float(self._u[self._pos - 1])

    def pick(self, side: int, latent: bool = False) -> int:
        idx, cw, cn = self.fixed[side]
        fixed_w = float(cw[-1]) if len(cw) else 0.0
        flip = () if latent else [k for k in self.flipping
                                  if self.side[k] == side]
        weight = self.weight
        tot = fixed_w
        for k in flip:
            tot += weight[k]
        if tot <= 0:
            # Nobody with positive weight: uniform over the one-sided.
            r = self._uniform() * cn[-1]
            return int(idx[np.searchsorted(cn, r, side="right")])
        r = self._uniform() * tot
        for k in flip:
            r -= weight[k]
            if r < 0:
                return k
        r = min(max(r, 0.0), fixed_w * (1 - 1e-12))
        return int(idx[np.searchsorted(cw, r, side="right")])

    def filled(self, k: int, q: int = 0) -> None:
        self.count[k] += 1
        if self.one_sided[k]:
            return
        if self.mm[k]:
            # Quote on the side that brings the inventory back to zero.
            self.inv[k] += self.side[k] * q
            new = -self.side[k] if self.inv[k] == 0 else \
                (-1 if self.inv[k] > 0 else 1)
            if new != self.side[k]:
                self.runs.append((k, self.side[k], self.count[k], True))
                self.side[k] = new
                self.count[k] = 0
            return
        self.left[k] -= 1
        if self.left[k] <= 0:
            self.runs.append((k, self.side[k], self.count[k], True))
            self.side[k] = -self.side[k]
            self.count[k] = 0
            self.left[k] = self._draw_run(k)

    def close(self) -> None:
        for k in range(len(self.specs)):
            if self.count[k] > 0:
                self.runs.append((k, self.side[k], self.count[k], False))


@dataclass
class SessionOutput:
    tape: Tape
    ledger: GroundTruthLedger
    date: _dt.date
    half: str
    volume_profile: np.ndarray


def simulate_session(cfg: SimConfig, index: int) -> SessionOutput:
    """Generate one session (the ``index``-th of the configuration)."""
    date, half = cfg.session_dates()[index]
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.seed, index])))
    start_ns, end_ns = session_window(date, half)
    L = (end_ns - start_ns) / SECOND_NS
    V = cfg.volume_target
    label = f"{date.isoformat()}-{half}"

    runs = _plan_takers(cfg, rng, V, L)

    # -- market orders ------------------------------------------------------
    if runs:
        t = np.concatenate([r.t for r in runs])
        q = np.concatenate([r.q for r in runs])
        sign = np.concatenate([np.full(len(r.t), r.sign) for r in runs])
        kdt = np.concatenate([np.full(len(r.t), r.dt) for r in runs])
        run_id = np.concatenate([np.full(len(r.t), k) for k, r in enumerate(runs)])
        trader = np.concatenate([np.full(len(r.t), r.trader, dtype=object)
                                 for r in runs])
    else:
        t = q = sign = kdt = run_id = np.zeros(0)
        trader = np.zeros(0, dtype=object)
    order = np.argsort(t, kind="stable")
    t, q, sign, kdt, run_id, trader = (a[order] for a in
                                       (t, q, sign, kdt, run_id, trader))
    q = q.astype(np.int64)
    sign = sign.astype(np.int64)
    run_id = run_id.astype(np.int64)
    M = len(t)
    ts = start_ns + np.rint(t * SECOND_NS).astype(np.int64)
    # Distinct, increasing nanosecond stamps.
    if M:
        ts = np.maximum.accumulate(ts - np.arange(M)) + np.arange(M)
    t = (ts - start_ns) / SECOND_NS

    amp = sign * cfg.G0 * np.sqrt(q.astype(float))
    before = _impact_before(t, amp, kdt, cfg.i0, cfg.beta)
    lag0 = (1.0 / cfg.i0) ** cfg.beta if cfg.i0 > 0 else 1.0
    after = before + amp * lag0
    x = np.concatenate([[0.0], t / L])
    var = cfg.noise_vol ** 2 * np.diff(_noise_cum(x, cfg.noise_u_shape))
    noise = np.cumsum(np.sqrt(np.maximum(var, 0)) * rng.standard_normal(M))
    F_pre = noise + before
    F_post = noise + after

    p0 = cfg.p0_ticks
    lot = cfg.lot
    bs = cfg.best_size_lots

    def sizes(n):
        return rng.integers(1, 2 * bs, size=(2, n)) * lot

    mid_pre = np.rint(p0 * np.exp(F_pre)).astype(np.int64)
    pre_bid, pre_ask = mid_pre - 1, mid_pre + 1
    pre_bs, pre_as = sizes(M)
    opp = np.where(sign > 0, pre_as, pre_bs)
    depleted = q > opp
    mid_post = np.rint(p0 * np.exp(F_post)).astype(np.int64)
    fresh_bs, fresh_as = sizes(M)
    post_bid = np.where(depleted, mid_post - 1, pre_bid)
    post_ask = np.where(depleted, mid_post + 1, pre_ask)
    left = opp - q
    refill_b, refill_a = sizes(M)
    post_bs = np.where(depleted, fresh_bs,
                       np.where(sign < 0, np.where(left > 0, left, refill_b), pre_bs))
    post_as = np.where(depleted, fresh_as,
                       np.where(sign > 0, np.where(left > 0, left, refill_a), pre_as))

    # -- fills ----------------------------------------------------------------
    specs = cfg.all_providers()
    book = _ProviderBook(specs, rng)
    fill_mo, fill_prov, fill_q, fill_deep, fill_rank = [], [], [], [], []
    for k in range(M):
        side = -int(sign[k])
        best_part = int(min(q[k], opp[k]))
        p = book.pick(side)
        fill_mo.append(k), fill_prov.append(p), fill_q.append(best_part)
        fill_deep.append(False), fill_rank.append(int(book.count[p]) + 1)
        book.filled(p, best_part)
        if depleted[k]:
            p2 = book.pick(side, latent=cfg.sweep_to_latent)
            fill_mo.append(k), fill_prov.append(p2)
            fill_q.append(int(q[k] - best_part)), fill_deep.append(True)
            fill_rank.append(int(book.count[p2]) + 1)
            book.filled(p2, int(q[k] - best_part))
    book.close()
    fill_mo = np.asarray(fill_mo, dtype=np.int64)
    fill_prov = np.asarray(fill_prov, dtype=np.int64)
    fill_q = np.asarray(fill_q, dtype=np.int64)
    fill_deep = np.asarray(fill_deep, dtype=bool)
    fill_rank = np.asarray(fill_rank, dtype=np.int64)
    nF = len(fill_mo)
    prov_names = np.array([p.name for p in specs] or ["-"], dtype=object)

    # -- limit submissions for the filled orders -------------------------------
    fill_ts = ts[fill_mo] if nF else np.zeros(0, dtype=np.int64)
    delay = (rng.random(nF) * 20.0 * SECOND_NS).astype(np.int64)
    lim_ts = np.maximum(fill_ts - delay, start_ns)
    # Limit rows must precede their fill group.
    lim_ts = np.minimum(lim_ts, fill_ts - 1)

    # -- background orders -------------------------------------------------------
    n_bg = int(rng.poisson(cfg.bg_rate * L))
    bg_t = np.sort(rng.random(n_bg)) * L
    bg_ts = start_ns + (bg_t * SECOND_NS).astype(np.int64)
    bg_side = np.where(rng.random(n_bg) < 0.5, 1, -1)
    bg_off = rng.integers(2, 40, n_bg)
    bg_size = rng.integers(1, 2 * bs, n_bg) * lot
    bg_trader = rng.integers(0, cfg.n_background, n_bg)
    bg_cancel_ts = bg_ts + (rng.random(n_bg) * cfg.bg_cancel_s * SECOND_NS).astype(np.int64)
    bg_cancel = bg_cancel_ts < end_ns
    edge_ts = np.zeros(0, dtype=np.int64)
    if cfg.edge_noise:
        raw_lo, raw_hi = RAW_WINDOWS[half]
        day0 = start_ns - (raw_lo * MINUTE_NS + 10 * MINUTE_NS)
        lo_edge = day0 + raw_lo * MINUTE_NS + (rng.random(20) * 10 * MINUTE_NS).astype(np.int64)
        hi_edge = end_ns + (rng.random(20) * 10 * MINUTE_NS).astype(np.int64)
        edge_ts = np.sort(np.concatenate([lo_edge, hi_edge]))

    # -- quotes in force at arbitrary times ---------------------------------------
    init_b, init_a = sizes(1)
    q_bid = np.concatenate([[p0 - 1], post_bid])
    q_ask = np.concatenate([[p0 + 1], post_ask])
    q_bsz = np.concatenate([init_b, post_bs])
    q_asz = np.concatenate([init_a, post_as])

    def quotes_at(tt):
        k = np.searchsorted(ts, tt, side="right")
        return q_bid[k], q_ask[k], q_bsz[k], q_asz[k]

    # -- assemble rows ----------------------------------------------------------------
    # Sort key: (ts, group, sub) with market-order groups after other rows
    # sharing their timestamp and fills right after their M row.
    cols = {k: [] for k in ("ts", "oid", "tid", "ev", "side", "price", "size",
                            "bb", "ba", "bsz", "asz", "grp", "sub", "fidx")}

    def add(ts_, oid, tid, ev, side_, price, size_, bb, ba, bsz, asz, grp, sub,
            fidx=None):
        cols["ts"].append(np.asarray(ts_, dtype=np.int64))
        cols["oid"].append(np.asarray(oid, dtype=object))
        cols["tid"].append(np.asarray(tid, dtype=object))
        cols["ev"].append(np.full(len(ts_), ev, dtype=np.uint8))
        cols["side"].append(np.asarray(side_, dtype=np.int8))
        cols["price"].append(np.asarray(price, dtype=np.int64))
        cols["size"].append(np.asarray(size_, dtype=np.int64))
        for key, v in (("bb", bb), ("ba", ba), ("bsz", bsz), ("asz", asz)):
            cols[key].append(np.asarray(v, dtype=np.int64))
        cols["grp"].append(np.asarray(grp, dtype=np.int64))
        cols["sub"].append(np.asarray(sub, dtype=np.int64))
        cols["fidx"].append(np.full(len(ts_), -1, dtype=np.int64) if fidx is None
                            else np.asarray(fidx, dtype=np.int64))

    tag = f"{index:04d}"
    mo_oid = np.array([f"m{tag}-{k}" for k in range(M)], dtype=object)
    fill_oid = np.array([f"l{tag}-{k}" for k in range(nF)], dtype=object)
    # Fill prices are set after sigma_D is known; best-level price for now.
    best_px = np.where(sign > 0, pre_ask, pre_bid)
    add(ts, mo_oid, trader, MARKET, sign, best_px, q, pre_bid, pre_ask,
        pre_bs, pre_as, np.arange(M), np.zeros(M))
    fill_sub = np.ones(nF, dtype=np.int64)
    if nF:
        fill_sub[1:] += (fill_mo[1:] == fill_mo[:-1])
    add(fill_ts, fill_oid, prov_names[fill_prov], EXECUTE, -sign[fill_mo],
        np.zeros(nF), fill_q, post_bid[fill_mo], post_ask[fill_mo],
        post_bs[fill_mo], post_as[fill_mo], fill_mo, fill_sub, np.arange(nF))
    lb, la, lbs, las = quotes_at(lim_ts)
    add(lim_ts, fill_oid, prov_names[fill_prov], LIMIT, -sign[fill_mo],
        np.zeros(nF), fill_q, lb, la, lbs, las, np.full(nF, -1), np.zeros(nF),
        np.arange(nF))
    bb, ba, bbs, bas = quotes_at(bg_ts)
    bg_oid = np.array([f"b{tag}-{k}" for k in range(n_bg)], dtype=object)
    bg_tid = np.array([f"BG{k:03d}" for k in range(cfg.n_background)],
                      dtype=object)[bg_trader]
    bg_price = np.where(bg_side > 0, bb - bg_off, ba + bg_off)
    add(bg_ts, bg_oid, bg_tid, LIMIT, bg_side, bg_price, bg_size, bb, ba, bbs,
        bas, np.full(n_bg, -1), np.zeros(n_bg))
    ct = bg_cancel_ts[bg_cancel]
    cb, ca, cbs, cas = quotes_at(ct)
    add(ct, bg_oid[bg_cancel], bg_tid[bg_cancel], CANCEL, bg_side[bg_cancel],
        bg_price[bg_cancel], bg_size[bg_cancel], cb, ca, cbs, cas,
        np.full(len(ct), -1), np.zeros(len(ct)))
    if len(edge_ts):
        eb, ea, ebs, eas = quotes_at(edge_ts)
        n_e = len(edge_ts)
        add(edge_ts, [f"e{tag}-{k}" for k in range(n_e)], ["EDGE"] * n_e,
            LIMIT, np.ones(n_e), eb - 5, np.full(n_e, lot), eb, ea, ebs, eas,
            np.full(n_e, -1), np.zeros(n_e))

    cat = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()}
    n_rows = len(cat["ts"])
    order = np.lexsort((np.arange(n_rows), cat["sub"], cat["grp"], cat["ts"]))
    cat = {k: v[order] for k, v in cat.items()}
    ev_kind = cat["ev"]

    # -- realized sigma_D, then provider fill prices ----------------------------------
    tmp = Tape(cat["ts"], cat["oid"], cat["tid"], ev_kind, cat["side"],
               cat["price"], cat["size"], cat["bb"], cat["ba"], cat["bsz"],
               cat["asz"])
    in_win = (tmp.ts >= start_ns) & (tmp.ts < end_ns)
    sess = Session(cfg.stock_id, date, half, tmp[in_win], start_ns, end_ns)
    v_d, sigma_d = session_stats(sess) if M else (0, 0.0)

    fill_price = np.where(sign[fill_mo] > 0, pre_ask[fill_mo], pre_bid[fill_mo]) \
        if nF else np.zeros(0, dtype=np.int64)
    deep_px = mid_pre[fill_mo] + sign[fill_mo] * np.rint(
        np.sqrt(2.0 * q[fill_mo] / cfg.gamma)).astype(np.int64) if nF else fill_price
    fill_price = np.where(fill_deep, deep_px, fill_price)
    anchor = np.zeros(len(specs))
    cum = np.zeros(len(specs))
    scripted = np.array([sp.kind == "provider" for sp in specs] or [False])
    for f in np.flatnonzero(scripted[fill_prov]) if nF else ():
        p = fill_prov[f]
        spec = specs[p]
        eps = int(sign[fill_mo[f]])
        r = fill_rank[f]
        if r == 1:
            anchor[p] = np.log(mid_pre[fill_mo[f]] + eps)
            cum[p] = 0.0
        else:
            cum[p] += spec.C * sigma_d * (r - 1) ** -spec.kappa
        lp = anchor[p] + eps * cum[p]
        if spec.price_noise:
            lp += spec.price_noise * sigma_d * rng.standard_normal()
        fill_price[f] = int(np.rint(np.exp(lp)))
    # Write the prices into the X and L rows.
    rows = np.flatnonzero(cat["fidx"] >= 0)
    cat["price"][rows] = fill_price[cat["fidx"][rows]]

    tape = Tape(cat["ts"], cat["oid"], cat["tid"], ev_kind, cat["side"],
                cat["price"], cat["size"], cat["bb"], cat["ba"], cat["bsz"],
                cat["asz"])

    # -- ledger ---------------------------------------------------------------
    run_of = run_id
    n_runs = len(runs)
    meta_rows = []
    child_rows = {"metaorder": [], "ts_ns": [], "q": [], "depleted": []}
    own = np.zeros(n_runs)
    own_flow = np.zeros(n_runs)
    by_trader = pd.Series(np.arange(M)).groupby(trader).indices if M else {}

    def flow_at(idx, k_eval):
        # Noiseless impact at MO ``k_eval`` (before it) of the orders ``idx``.
        idx = idx[idx < k_eval]
        if not idx.size:
            return 0.0
        kd = kdt[idx]
        base = kd / (t[k_eval] - t[idx] + cfg.i0 * kd)
        return float(np.sum(amp[idx] * base ** cfg.beta))

    for k, r in enumerate(runs):
        sel = np.flatnonzero(run_of == k)
        tk = t[sel]
        last = sel[-1]
        lags = tk[-1] - tk[:-1]
        kd = kdt[sel[:-1]]
        base = kd / (lags + cfg.i0 * kd)
        val = np.sum(np.sqrt(q[sel[:-1]].astype(float)) * base ** cfg.beta)
        if depleted[last]:
            val += np.sqrt(float(q[last])) * lag0
        own[k] = cfg.G0 * val
        mine = np.asarray(by_trader[r.trader])
        own_flow[k] = r.sign * (flow_at(mine, last) - flow_at(mine, sel[0])
                                + (amp[last] * lag0 if depleted[last] else 0.0))
        Q = int(q[sel].sum())
        meta_rows.append((label, r.trader, r.kind, r.sign, len(sel), Q,
                          int(ts[sel[0]]), int(ts[last]), float(own[k]),
                          float(own_flow[k]),
                          Q / v_d if v_d else float("nan"), float(sigma_d)))
        child_rows["metaorder"].extend([k] * len(sel))
        child_rows["ts_ns"].extend(ts[sel].tolist())
        child_rows["q"].extend(q[sel].tolist())
        child_rows["depleted"].extend(depleted[sel].tolist())
    metaorders = pd.DataFrame(meta_rows, columns=[
        "session", "trader_id", "kind", "sign", "N", "Q", "start_ts",
        "end_ts", "own_impact", "own_flow_impact", "f", "sigma_D"])
    children = pd.DataFrame(child_rows)

    agents = _agent_labels(specs, label, L, runs, ts, trader, sign,
                           lim_ts, prov_names[fill_prov], -sign[fill_mo])
    prov_runs = pd.DataFrame(
        [(label, specs[k].name, s, n, c) for k, s, n, c in book.runs],
        columns=["session", "provider", "side", "n", "complete"])
    path = pd.DataFrame({"session": label, "ts_ns": ts, "sign": sign, "q": q,
                         "impact_before": before, "impact_after": after})
    nb = int(np.ceil(L / (15 * 60)))
    bins = np.minimum(((fill_ts - start_ns) // (15 * MINUTE_NS)), nb - 1) if nF \
        else np.zeros(0, dtype=np.int64)
    vol_bins = np.bincount(bins, weights=fill_q, minlength=nb) if nF else np.zeros(nb)
    volume_bins = pd.DataFrame({"session": label, "half": half,
                                "bin": np.arange(nb), "volume": vol_bins.astype(np.int64)})
    sessions = pd.DataFrame({"session": [label], "V_D": [int(fill_q.sum())],
                             "sigma_D": [float(sigma_d)]})
    ledger = GroundTruthLedger(metaorders, children, agents, prov_runs, path,
                               volume_bins, sessions, config=cfg.to_dict())
    return SessionOutput(tape, ledger, date, half, vol_bins)


def _agent_labels(specs, label, L, runs, ts, trader, sign, lim_ts, lim_tid,
                  lim_side) -> pd.DataFrame:
    """Class of every executing agent from the generator's own order lists.

    ``fast`` is the realised class, reversal time shorter than the session;
    an agent that never switches side in the session is slow whatever its
    type.  ``fast_kind`` is the class its type is designed for.
    """
    kinds = {}
    for r in runs:
        kinds[r.trader] = r.kind
    for p in specs:
        kinds[p.name] = p.kind
    fast_kinds = {"fast_taker", "provider", "market_maker"}
    times: dict = {}
    for tt, tid, s in zip(ts.tolist(), trader.tolist(), sign.tolist()):
        times.setdefault(tid, []).append((tt, s))
    for tt, tid, s in zip(lim_ts.tolist(), lim_tid.tolist(), lim_side.tolist()):
        times.setdefault(tid, []).append((tt, s))
    rows = []
    for tid in sorted(times):
        ev = sorted(times[tid])
        gaps = [(b[0] - a[0]) / SECOND_NS for a, b in zip(ev[:-1], ev[1:])
                if a[1] != b[1]]
        tau = float(np.mean(gaps)) if gaps else float("nan")
        kind = kinds.get(tid, "unknown")
        rows.append((label, tid, kind, bool(tau < L), kind in fast_kinds, tau))
    return pd.DataFrame(rows, columns=["session", "trader_id", "kind", "fast",
                                       "fast_kind", "tau_s"])


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def iter_simulation(cfg: SimConfig) -> Iterator[SessionOutput]:
    for k in range(cfg.n_sessions):
        yield simulate_session(cfg, k)


def simulate(cfg: SimConfig) -> tuple[Tape, GroundTruthLedger]:
    """Generate the whole configuration in memory."""
    outs = list(iter_simulation(cfg))
    return (Tape.concat([o.tape for o in outs]),
            GroundTruthLedger.concat([o.ledger for o in outs]))


def expected_seasonality(ledger: GroundTruthLedger) -> pd.DataFrame:
    """Generator-side mean executed volume per 15-minute bin and half."""
    vb = ledger.volume_bins
    g = vb.groupby(["half", "bin"])["volume"]
    return pd.DataFrame({"mean": g.mean(), "se": g.sem(),
                         "n": g.size()}).reset_index()


def simulate_to_files(cfg: SimConfig, out_dir, fmt: str = "csv",
                      jobs: int = 1) -> dict:
    """Stream the tape to ``out_dir`` with its metadata, ledger and
    seasonality sidecars; returns the written paths."""
    from ._io import AtomicFile, atomic_write_text

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = "tape.csv" if fmt == "csv" else "tape.bin"
    tape_path = out / name
    ledgers = []
    with AtomicFile(tape_path) as fh:
        writer = TapeWriter(fh, fmt)
        for o in _run_sessions(cfg, jobs):
            writer.write(o.tape)
            ledgers.append(o.ledger)
        writer.close()
    ledger = GroundTruthLedger.concat(ledgers)
    dates = cfg.session_dates()
    meta = StockMeta(cfg.stock_id, cfg.tick_size, dates[0][0],
                     extra={"p0_ticks": str(cfg.p0_ticks)})
    write_meta(meta, out / "tape.meta")
    ledger.write(out / "ledger.json")
    atomic_write_text(out / "seasonality.json",
                      expected_seasonality(ledger).to_json(orient="records"))
    atomic_write_text(out / "config.json", cfg.to_json() + "\n")
    return {"tape": tape_path, "meta": out / "tape.meta",
            "ledger": out / "ledger.json", "config": out / "config.json",
            "seasonality": out / "seasonality.json"}


def _run_sessions(cfg: SimConfig, jobs: int):
    if jobs <= 1:
        yield from iter_simulation(cfg)
        return
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as ex:
        yield from ex.map(simulate_session, [cfg] * cfg.n_sessions,
                          range(cfg.n_sessions))


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw)
