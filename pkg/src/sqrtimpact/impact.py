"""Impact estimators and the curve/tail fitting utilities they share.

Three measurements are provided:

* the metaorder impact curve, mean of ``eps * dp / sigma_D`` binned in
  ``f = Q / V_D`` and fitted by ``Y f**delta``;
* the child-order profile, mean cumulative impact after ``i`` children
  in units of ``sigma_D sqrt(q / V_D)``, fitted by
  ``A ((i + i0)**(1 - beta) - i0**(1 - beta))``;
* the impact of single market orders after a volume time equal to their
  own size, with seasonality removed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, special

from .binning import BinAccumulator, log_edges
from .errors import (
    InsufficientData,
    InsufficientRanks,
    NonPositiveMean,
    TooFewTailSamples,
)
from .metaorder import MetaorderSet
from .tape import SeasonalityProfile, Session, executed_mask

DEFAULT_MIN_BIN_COUNT = 50
DEFAULT_EDGES = log_edges(1e-6, 1.0, 4)


# ---------------------------------------------------------------------------
# Power-law fit of binned curves
# ---------------------------------------------------------------------------

@dataclass
class PowerFit:
    """``y = prefactor * x**exponent``.

    ``cov`` is the covariance of ``(log prefactor, exponent)``.
    """

    prefactor: float
    exponent: float
    cov: np.ndarray
    n_bins: int
    chi2: float
    weighted: bool = True

    @property
    def prefactor_se(self) -> float:
        return float(self.prefactor * np.sqrt(self.cov[0, 0]))

    @property
    def exponent_se(self) -> float:
        return float(np.sqrt(self.cov[1, 1]))

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent

    def to_dict(self) -> dict:
        return {"prefactor": self.prefactor, "exponent": self.exponent,
                "prefactor_se": self.prefactor_se,
                "exponent_se": self.exponent_se,
                "cov_logprefactor_exponent": np.asarray(self.cov).tolist(),
                "n_bins": self.n_bins, "chi2": self.chi2,
                "weighted": self.weighted}


def fit_power_curve(x, y, se=None, max_iter: int = 100) -> PowerFit:
    """Weighted least squares of ``log y = log a + b log x``.

    Bin standard errors are carried to log space as ``se / y_hat``, with
    ``y_hat`` the fitted curve, iterated from ``y_hat = y`` to a fixed
    point.  Using the fitted rather than the observed means keeps the
    weights from rewarding bins that happened to fluctuate upwards.  The
    weights are the inverse squared log-space errors and the covariance is
    the absolute ``(X' W X)^-1``.  Points with ``y <= 0`` are dropped.
    When no usable errors are given (missing, zero or non-finite) the fit
    is unweighted and the covariance is scaled by the residual variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    se = None if se is None else np.asarray(se, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0)
    pos = ok & (y > 0)
    if pos.sum() < 2:
        if ok.sum() >= 2:
            raise NonPositiveMean("fewer than two bins with positive mean")
        raise InsufficientData("fewer than two usable bins")
    lx, ly = np.log(x[pos]), np.log(y[pos])
    X = np.column_stack([np.ones_like(lx), lx])
    weighted = se is not None
    if weighted:
        s = se[pos]
        weighted = bool(np.all(np.isfinite(s)) and np.all(s > 0))

    def solve(w):
        XtW = X.T * w
        cov = np.linalg.pinv(XtW @ X)
        return cov, cov @ (XtW @ ly)

    if weighted:
        y_hat = y[pos]
        beta = None
        for _ in range(max_iter):
            w = (y_hat / s) ** 2
            cov, new = solve(w)
            done = beta is not None and np.allclose(new, beta, rtol=0,
                                                    atol=1e-13)
            beta = new
            y_hat = np.exp(X @ beta)
            if done:
                break
    else:
        w = np.ones_like(lx)
        cov, beta = solve(w)
    resid = ly - X @ beta
    chi2 = float(np.sum(w * resid ** 2))
    dof = len(lx) - 2
    if not weighted:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    return PowerFit(float(np.exp(beta[0])), float(beta[1]), cov,
                    int(len(lx)), chi2, weighted)


@dataclass
class SqrtLawFit:
    """``y = Y * sqrt(x)`` with the exponent held at 1/2."""

    Y: float
    se: float
    n_bins: int
    chi2: float

    def __call__(self, x):
        return self.Y * np.sqrt(np.asarray(x, dtype=float))

    def to_dict(self) -> dict:
        return asdict(self)


def fit_sqrt_law(x, y, se=None) -> SqrtLawFit:
    """Weighted least squares for ``Y`` in ``y = Y sqrt(x)`` on bin means.

    With usable errors ``se`` the weights are ``1/se**2`` and the standard
    error is absolute; otherwise the fit is unweighted with a
    residual-scaled error.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0)
    if ok.sum() < 1:
        raise InsufficientData("no usable bins")
    r = np.sqrt(x[ok])
    weighted = se is not None
    if weighted:
        s = np.asarray(se, dtype=float)[ok]
        weighted = bool(np.all(np.isfinite(s)) and np.all(s > 0))
    w = 1.0 / s ** 2 if weighted else np.ones_like(r)
    sxx = float(np.sum(w * r * r))
    Y = float(np.sum(w * r * y[ok]) / sxx)
    chi2 = float(np.sum(w * (y[ok] - Y * r) ** 2))
    var = 1.0 / sxx
    if not weighted:
        dof = ok.sum() - 1
        var *= chi2 / dof if dof > 0 else 0.0
    return SqrtLawFit(Y, float(np.sqrt(var)), int(ok.sum()), chi2)


# ---------------------------------------------------------------------------
# Binned curves
# ---------------------------------------------------------------------------

@dataclass
class TTrend:
    """Slope of fit residuals against centred ``log T``.

    The model is ``y = Y f**delta * (1 + slope * (log T - mean log T))``;
    ``se`` is heteroskedasticity-robust (HC1).
    """

    slope: float
    se: float
    n: int

    @property
    def z(self) -> float:
        return self.slope / self.se if self.se > 0 else float("nan")


@dataclass
class ImpactCurve:
    edges: np.ndarray
    x: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    min_bin_count: int = DEFAULT_MIN_BIN_COUNT
    fit: PowerFit | None = None
    label: str = ""
    strata: dict = field(default_factory=dict)
    t_trend: TTrend | None = None
    extra: dict = field(default_factory=dict)
    sqrt_fit: SqrtLawFit | None = None

    def used(self) -> np.ndarray:
        return (self.count >= self.min_bin_count) & np.isfinite(self.mean)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_lo": self.edges[:-1], "bin_hi": self.edges[1:],
                             "mean": self.mean, "se": self.se,
                             "count": self.count})

    def fit_dict(self) -> dict:
        out = {"label": self.label, "min_bin_count": self.min_bin_count,
               "fit": self.fit.to_dict() if self.fit else None,
               "sqrt_law": self.sqrt_fit.to_dict() if self.sqrt_fit else None}
        if self.t_trend is not None:
            out["t_trend"] = asdict(self.t_trend)
        if self.strata:
            out["strata"] = {k: (c.fit.to_dict() if c.fit else None)
                             for k, c in self.strata.items()}
        out.update(self.extra)
        return out


def write_curve(curve: ImpactCurve, csv_path, json_path=None) -> None:
    from ._io import atomic_write_bytes, atomic_write_text

    df = curve.to_frame()
    df = df[df["count"] > 0]
    atomic_write_bytes(csv_path, df.to_csv(index=False, lineterminator="\n",
                                           float_format="%.10g").encode())
    if json_path is not None:
        atomic_write_text(json_path, json.dumps(curve.fit_dict(), indent=2,
                                                sort_keys=True) + "\n")


def read_curve(csv_path) -> ImpactCurve:
    df = pd.read_csv(csv_path)
    edges = np.append(df["bin_lo"].to_numpy(), df["bin_hi"].iloc[-1])
    if not np.allclose(edges[1:-1], df["bin_hi"].to_numpy()[:-1]):
        # Sparse export: rebuild from the full default grid.
        full = DEFAULT_EDGES
        k = np.searchsorted(full, df["bin_lo"].to_numpy() * (1 + 1e-9)) - 1
        mean = np.full(len(full) - 1, np.nan)
        se = np.full(len(full) - 1, np.nan)
        count = np.zeros(len(full) - 1, dtype=np.int64)
        mean[k], se[k], count[k] = df["mean"], df["se"], df["count"]
        return ImpactCurve(full, np.sqrt(full[:-1] * full[1:]), mean, se,
                           count)
    return ImpactCurve(edges, np.sqrt(edges[:-1] * edges[1:]),
                       df["mean"].to_numpy(), df["se"].to_numpy(),
                       df["count"].to_numpy())


def binned_curve(x, y, edges=None, min_bin_count=DEFAULT_MIN_BIN_COUNT,
                 label="", fit=True) -> ImpactCurve:
    """Bin ``y`` against ``x`` and fit a power law to well-populated bins."""
    edges = DEFAULT_EDGES if edges is None else np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    center, mean, _, se, count = BinAccumulator(edges).add(x, y).stats()
    curve = ImpactCurve(edges, center, mean, se, count, min_bin_count,
                        label=label)
    if fit:
        use = curve.used()
        if use.sum() < 2:
            raise InsufficientData(
                f"{label or 'curve'}: fewer than 2 bins with >= "
                f"{min_bin_count} observations")
        curve.fit = fit_power_curve(center[use], mean[use], se[use])
        curve.sqrt_fit = fit_sqrt_law(center[use], mean[use], se[use])
    return curve


def metaorder_impact_values(ms: MetaorderSet):
    """``(f, eps * dp / sigma_D, T_s)`` for metaorders with usable data."""
    y = ms.sign * ms.delta_p() / ms.sigma_D
    ok = np.isfinite(y) & np.isfinite(ms.f) & (ms.f > 0) & (ms.sigma_D > 0)
    return ms.f[ok], y[ok], ms.T_s[ok], ok


def metaorder_impact_curve(ms: MetaorderSet, edges=None,
                           min_bin_count: int = DEFAULT_MIN_BIN_COUNT,
                           n_t_strata: int = 3) -> ImpactCurve:
    """Square-root law curve with T-stratified companions and a T trend.

    The impact of a metaorder runs from the log mid just before its first
    child to the log mid just after its last child.  Strata split
    metaorders with ``N >= 2`` by quantiles of the execution time ``T``;
    their fits are attempted on the same edges and skipped when too sparse.
    """
    f, y, T, ok = metaorder_impact_values(ms)
    curve = binned_curve(f, y, edges, min_bin_count, label="metaorder")
    multi = T > 0
    if n_t_strata > 1 and multi.sum() >= n_t_strata * 2 * min_bin_count:
        qs = np.quantile(T[multi], np.linspace(0, 1, n_t_strata + 1))
        for k in range(n_t_strata):
            sel = multi & (T >= qs[k]) & ((T <= qs[k + 1]) if k == n_t_strata - 1
                                          else (T < qs[k + 1]))
            try:
                c = binned_curve(f[sel], y[sel], curve.edges, min_bin_count,
                                 label=f"T[{qs[k]:.0f},{qs[k + 1]:.0f}]s")
            except InsufficientData:
                continue
            curve.strata[c.label] = c
    if multi.sum() >= 3:
        curve.t_trend = t_trend(f[multi], y[multi], T[multi], curve.fit)
    return curve


def t_trend(f, y, T, fit: PowerFit) -> TTrend:
    g = fit(f)
    z = g * (np.log(T) - np.log(T).mean())
    r = y - g
    X = np.column_stack([np.ones_like(z), z])
    XtX_inv = np.linalg.inv(X.T @ X)
    b = XtX_inv @ (X.T @ r)
    e = r - X @ b
    n = len(r)
    meat = (X * (e ** 2)[:, None]).T @ X
    cov = XtX_inv @ meat @ XtX_inv * n / max(n - 2, 1)
    return TTrend(float(b[1]), float(np.sqrt(cov[1, 1])), n)


# ---------------------------------------------------------------------------
# Child-order profile
# ---------------------------------------------------------------------------

@dataclass
class ChildFit:
    """``A ((i + i0)**(1 - beta) - i0**(1 - beta))``, or ``A i**(1-beta)``
    when ``i0`` is pinned to 0."""

    A: float
    i0: float
    beta: float
    cov: np.ndarray
    cost: float
    free: tuple = ("A", "i0", "beta")
    model: str = "closed_form"

    def __call__(self, i):
        i = np.asarray(i, dtype=float)
        if self.model == "discrete_sum":
            return self.A * _discrete_partial(i, self.i0, self.beta)
        g = 1.0 - self.beta
        return self.A * ((i + self.i0) ** g - self.i0 ** g)

    def se(self, name: str) -> float:
        if name not in self.free:
            return 0.0
        k = self.free.index(name)
        return float(np.sqrt(self.cov[k, k]))

    def to_dict(self) -> dict:
        return {"A": self.A, "i0": self.i0, "beta": self.beta,
                "A_se": self.se("A"), "i0_se": self.se("i0"),
                "beta_se": self.se("beta"), "cost": self.cost,
                "free": list(self.free), "model": self.model}


def _discrete_partial(i, i0, beta):
    """``sum_{m=1..i} (m + i0)**-beta`` for integer-valued ``i``."""
    i = np.asarray(i)
    top = int(np.max(i)) if i.size else 0
    m = np.arange(1, top + 1, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum((m + i0) ** -beta)])
    return cum[np.asarray(i, dtype=int)]


@dataclass
class ChildProfile:
    rank: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    i_max: int
    min_count: int
    scale: float = float("nan")
    mean_spacing_s: float = float("nan")
    fit: ChildFit | None = None
    fit_sqrt: ChildFit | None = None
    fit_i0_zero: ChildFit | None = None
    fit_i0_zero_analytic: ChildFit | None = None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"rank": self.rank, "mean": self.mean,
                             "se": self.se, "count": self.count})

    def fit_dict(self) -> dict:
        return {"i_max": self.i_max, "min_count": self.min_count,
                "scale": self.scale, "mean_spacing_s": self.mean_spacing_s,
                "fit": self.fit.to_dict() if self.fit else None,
                "fit_beta_half": self.fit_sqrt.to_dict() if self.fit_sqrt else None,
                "fit_i0_zero": self.fit_i0_zero.to_dict() if self.fit_i0_zero else None,
                "fit_i0_zero_analytic": self.fit_i0_zero_analytic.to_dict()
                if self.fit_i0_zero_analytic else None}


I0_GRID = np.geomspace(0.5, 20.0, 14)
BETA_GRID = np.linspace(0.2, 0.9, 8)


def fit_child_curve(i, J, se=None, *, i0=None, beta=None,
                    model: str = "closed_form") -> ChildFit:
    """Least-squares fit of the child profile.

    ``i0`` or ``beta`` may be pinned.  Free ``(i0, beta)`` are seeded from
    the best point of a fixed grid (``A`` solved linearly at each point),
    then refined with a trust-region solver.  ``model="discrete_sum"``
    fits ``A sum_{m=1..i} (m + i0)**-beta`` instead of the closed form.
    """
    i = np.asarray(i, dtype=float)
    J = np.asarray(J, dtype=float)
    w = np.ones_like(J) if se is None else 1.0 / np.asarray(se, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        w = np.ones_like(J)

    def shape(i0_, b_):
        if model == "discrete_sum":
            return _discrete_partial(i, i0_, b_)
        g = 1.0 - b_
        return (i + i0_) ** g - i0_ ** g

    free = ["A"] + (["i0"] if i0 is None else []) + (["beta"] if beta is None else [])

    def unpack(p):
        d = dict(zip(free, p))
        return d["A"], d.get("i0", i0), d.get("beta", beta)

    def resid(p):
        A, i0_, b_ = unpack(p)
        return (A * shape(i0_, b_) - J) * w

    best = None
    for a in (I0_GRID if i0 is None else [i0]):
        for b in (BETA_GRID if beta is None else [beta]):
            s = shape(a, b) * w
            denom = s @ s
            if denom <= 0:
                continue
            A = (s @ (J * w)) / denom
            cost = np.sum((A * s - J * w) ** 2)
            if best is None or cost < best[0]:
                best = (cost, A, a, b)
    _, A0, a0, b0 = best
    p0 = [A0] + ([a0] if i0 is None else []) + ([b0] if beta is None else [])
    lo = [-np.inf] + ([0.0] if i0 is None else []) + ([1e-3] if beta is None else [])
    hi = [np.inf] + ([1e3] if i0 is None else []) + ([0.999] if beta is None else [])
    res = optimize.least_squares(resid, p0, bounds=(lo, hi), method="trf",
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                 max_nfev=20000, x_scale="jac")
    A, i0_, b_ = unpack(res.x)
    jac = res.jac
    try:
        cov = np.linalg.pinv(jac.T @ jac)
    except np.linalg.LinAlgError:  # pragma: no cover
        cov = np.full((len(free), len(free)), np.nan)
    if se is None:
        dof = max(len(J) - len(free), 1)
        cov = cov * (2 * res.cost / dof)
    return ChildFit(float(A), float(i0_), float(b_), cov, float(res.cost),
                    tuple(free), model)


def child_profile_values(ms: MetaorderSet, i_max: int = 50,
                         last: str = "exclude"):
    """Per-child rescaled cumulative impacts.

    Returns ``(rank, value, owner)``.  The impact after ``i`` children is
    read at the mid just before child ``i + 1``, so every child has had one
    spacing to act.  ``last="exclude"`` drops rank ``N`` (no later child);
    ``last="after"`` uses the mid just after the last child instead.
    """
    if last not in ("exclude", "after"):
        raise ValueError("last must be 'exclude' or 'after'")
    owner = ms.child_owner()
    rank = ms.child_rank()
    is_last = rank == ms.N[owner]
    start = ms.c_p[ms.ptr[:-1]][owner]
    nxt = np.empty_like(ms.c_p)
    nxt[:-1] = ms.c_p[1:]
    nxt[is_last] = ms.c_p_after[is_last]
    qbar = (ms.Q / ms.N)[owner]
    unit = ms.sigma_D[owner] * np.sqrt(qbar / ms.V_D[owner])
    value = ms.sign[owner] * (nxt - start) / unit
    keep = (rank <= i_max) & np.isfinite(value)
    if last == "exclude":
        keep &= ~is_last
    return rank[keep], value[keep], owner[keep]


def child_impact_profile(ms: MetaorderSet, i_max: int = 50,
                         min_count: int = DEFAULT_MIN_BIN_COUNT,
                         last: str = "exclude", fit: bool = True) -> ChildProfile:
    """Mean rescaled cumulative impact per child rank, with three fits."""
    rank, value, owner = child_profile_values(ms, i_max, last)
    ranks = np.arange(1, i_max + 1)
    count = np.bincount(rank, minlength=i_max + 1)[1:]
    s1 = np.bincount(rank, weights=value, minlength=i_max + 1)[1:]
    s2 = np.bincount(rank, weights=value ** 2, minlength=i_max + 1)[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / count
        var = (s2 - count * mean ** 2) / (count - 1)
        se = np.sqrt(np.maximum(var, 0)) / np.sqrt(count)
    first = owner[rank == 1]
    scale = float(np.mean(np.sqrt(ms.V_D[first]) / ms.sigma_D[first])) \
        if first.size else float("nan")
    multi = ms.N >= 2
    spacing = float(np.mean(ms.T_s[multi] / (ms.N[multi] - 1))) \
        if multi.any() else float("nan")
    prof = ChildProfile(ranks, mean, se, count, i_max, min_count, scale,
                        spacing)
    if fit:
        use = (count >= min_count) & np.isfinite(mean) & np.isfinite(se)
        if use.sum() < 5:
            raise InsufficientRanks(f"only {int(use.sum())} ranks with >= "
                                    f"{min_count} observations")
        args = (ranks[use], mean[use], se[use])
        prof.fit = fit_child_curve(*args)
        prof.fit_sqrt = fit_child_curve(*args, beta=0.5)
        prof.fit_i0_zero = fit_child_curve(*args, i0=0.0)
        prof.fit_i0_zero_analytic = refit_i0_zero(prof.fit, i_max)
    return prof


def refit_i0_zero(fit: ChildFit, i_max: int = 50) -> ChildFit:
    """Unweighted ``A i**(1-beta)`` fit to the fitted curve on ``1..i_max``.

    Shows which pure power law a profile with offset ``i0`` mimics.
    """
    i = np.arange(1, i_max + 1)
    return fit_child_curve(i, fit(i), i0=0.0)


# ---------------------------------------------------------------------------
# Single market orders in volume time
# ---------------------------------------------------------------------------

@dataclass
class SingleMOResult:
    all_orders: ImpactCurve
    no_immediate: ImpactCurve
    lag0_no_immediate: np.ndarray
    n_truncated: int
    n_orders: int

    def fit_dict(self) -> dict:
        return {"all_orders": self.all_orders.fit_dict(),
                "no_immediate_impact": self.no_immediate.fit_dict(),
                "lag0_no_immediate_max_abs": float(np.max(np.abs(self.lag0_no_immediate)))
                if self.lag0_no_immediate.size else 0.0,
                "n_truncated": self.n_truncated, "n_orders": self.n_orders}


def single_mo_values(session: Session, seasonality: SeasonalityProfile):
    """Per-order ``(x, y, lag0, immediate_zero)`` and the truncation count.

    ``x = q / V_b`` and ``y = eps * (p(q) - p_before) / sigma_b`` where
    ``p(q)`` is the log mid at the first fill after which the volume traded
    strictly after the order reaches ``q``.
    """
    ev = session.events
    mo = session.market_orders()
    if not len(mo):
        e = np.zeros(0)
        return e, e, e, np.zeros(0, dtype=bool), 0
    ex = np.flatnonzero(executed_mask(ev))
    cum = np.cumsum(ev.size[ex])
    last_fill = mo.row + mo.n_fills
    # Position of each order's last fill within the executed rows.
    pos = np.searchsorted(ex, last_fill)
    target = cum[pos] + mo.q
    hit = np.searchsorted(cum, target, side="left")
    truncated = hit >= len(ex)
    logmid = ev.log_mid()
    hit_row = ex[np.minimum(hit, len(ex) - 1)]
    p_q = logmid[hit_row]
    sigma_b, V_b = seasonality.lookup(session, mo.ts)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = mo.sign * (p_q - mo.log_mid_before) / sigma_b
        x = mo.q / V_b
        lag0 = mo.sign * (mo.log_mid_after - mo.log_mid_before) / sigma_b
    zero_imm = mo.q <= mo.opposite_size
    ok = ~truncated & np.isfinite(y) & np.isfinite(x) & (x > 0)
    return x[ok], y[ok], lag0[ok], zero_imm[ok], int(truncated.sum())


def single_mo_impact(sessions, seasonality, edges=None,
                     min_bin_count: int = DEFAULT_MIN_BIN_COUNT) -> SingleMOResult:
    """Impact of individual market orders after a volume time ``q``.

    ``seasonality`` is a :class:`SeasonalityProfile` or a dict mapping
    calendar years to profiles.  Orders whose window runs past the session
    end are excluded and counted in ``n_truncated``.  The second curve
    keeps only orders no larger than the opposite best quote, which leave
    the mid unchanged on impact.
    """
    xs, ys, l0, zs, n_trunc = [], [], [], [], 0
    for s in sessions:
        prof = seasonality[s.date.year] if isinstance(seasonality, dict) \
            else seasonality
        x, y, lag0, z, nt = single_mo_values(s, prof)
        xs.append(x), ys.append(y), l0.append(lag0), zs.append(z)
        n_trunc += nt
    x = np.concatenate(xs) if xs else np.zeros(0)
    y = np.concatenate(ys) if ys else np.zeros(0)
    lag0 = np.concatenate(l0) if l0 else np.zeros(0)
    z = np.concatenate(zs) if zs else np.zeros(0, dtype=bool)
    edges = log_edges(1e-6, 1.0, 4) if edges is None else edges
    all_curve = binned_curve(x, y, edges, min_bin_count, label="all_orders")
    zero_curve = binned_curve(x[z], y[z], edges, min_bin_count,
                              label="no_immediate_impact")
    return SingleMOResult(all_curve, zero_curve, lag0[z], n_trunc, len(x))


# ---------------------------------------------------------------------------
# Discrete power-law tails
# ---------------------------------------------------------------------------

@dataclass
class TailFit:
    exponent: float
    x_min: int
    ks: float
    n_tail: int

    @property
    def exponent_se(self) -> float:
        return (self.exponent - 1.0) / np.sqrt(self.n_tail)


def _discrete_mle(tail: np.ndarray, x_min: int) -> float:
    slog = np.log(tail).sum()
    n = len(tail)

    def nll(a):
        return n * np.log(special.zeta(a, x_min)) + a * slog

    res = optimize.minimize_scalar(nll, bounds=(1.0 + 1e-6, 20.0),
                                   method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.x)


def _discrete_ks(values, counts, alpha, x_min) -> float:
    emp = np.cumsum(counts) / counts.sum()
    model = 1.0 - special.zeta(alpha, values + 1.0) / special.zeta(alpha, x_min)
    # Compare on both sides of each step of the empirical CDF.
    emp_before = np.concatenate([[0.0], emp[:-1]])
    model_before = np.concatenate(
        [[0.0], 1.0 - special.zeta(alpha, values[1:].astype(float))
         / special.zeta(alpha, x_min)])
    return float(max(np.max(np.abs(emp - model)),
                     np.max(np.abs(emp_before - model_before))))


def fit_tail_exponent(samples, x_min=None, min_tail: int = 100) -> TailFit:
    """Discrete power-law fit ``P(n) ~ n**-mu`` for ``n >= x_min``.

    The exponent is the maximum-likelihood estimate under the Hurwitz zeta
    normalization.  Unless ``x_min`` is given it is the candidate that
    minimizes the Kolmogorov-Smirnov distance between the empirical and
    fitted tails; candidates need ``min_tail`` samples and at least two
    distinct values at or above them.
    """
    x = np.asarray(samples)
    x = x[x >= 1].astype(np.int64)
    values, counts = np.unique(x, return_counts=True)
    tail_n = np.cumsum(counts[::-1])[::-1]
    if x_min is not None:
        cands = [int(x_min)]
    else:
        ok = (tail_n >= min_tail) & (np.arange(len(values)) < len(values) - 1)
        cands = [int(v) for v in values[ok]]
    best = None
    for xm in cands:
        k = np.searchsorted(values, xm)
        if tail_n.size <= k or tail_n[k] < min_tail or len(values) - k < 2:
            continue
        tail = x[x >= xm]
        a = _discrete_mle(tail, xm)
        ks = _discrete_ks(values[k:].astype(float), counts[k:], a, xm)
        if best is None or ks < best.ks:
            best = TailFit(a, xm, ks, int(tail_n[k]))
    if best is None:
        raise TooFewTailSamples(
            f"no x_min with >= {min_tail} tail samples and two distinct values")
    return best
