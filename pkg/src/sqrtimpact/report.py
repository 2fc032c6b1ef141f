"""Figure analogues rebuilt from the files other subcommands leave behind.

Each figure is written twice into ``<dir>/report/``: a tidy CSV holding the
plotted numbers, then an SVG rendering of that CSV.  Nothing is recomputed
from the tape; a figure whose inputs are missing is skipped and listed in
``report/index.json``.  SVG output is byte-stable: the hash salt is fixed and
no date is embedded.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import atomic_write_bytes, atomic_write_text
from .errors import DataError

RC = {"svg.hashsalt": "sqrtimpact", "svg.fonttype": "none",
      "font.size": 9.0, "axes.grid": True, "grid.alpha": 0.3}


def _read_csv(d: Path, name: str) -> pd.DataFrame | None:
    p = d / name
    return pd.read_csv(p) if p.exists() else None


def _read_json(d: Path, name: str) -> dict | None:
    p = d / name
    return json.loads(p.read_text()) if p.exists() else None


def _power(fit: dict | None, x):
    if not fit:
        return np.full(len(x), np.nan)
    return fit["prefactor"] * np.asarray(x, dtype=float) ** fit["exponent"]


def _child(fit: dict | None, i):
    if not fit:
        return np.full(len(i), np.nan)
    from .impact import ChildFit

    f = ChildFit(fit["A"], fit["i0"], fit["beta"], np.zeros((3, 3)),
                 fit.get("cost", 0.0), tuple(fit.get("free", ())),
                 fit.get("model", "closed_form"))
    return f(np.asarray(i, dtype=float))


def _centres(df: pd.DataFrame) -> np.ndarray:
    return np.sqrt(df["bin_lo"].to_numpy() * df["bin_hi"].to_numpy())


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

def stylized_facts_data(d: Path):
    dt = _read_csv(d, "facts_inter_child_time.csv")
    n = _read_csv(d, "facts_child_count.csv")
    h = _read_csv(d, "facts_f_hist.csv")
    if dt is None or n is None or h is None:
        return None
    h = h.assign(f=np.sqrt(h["f_lo"] * h["f_hi"]), mean=h["density"],
                 se=np.nan)
    parts = [g[["f", "mean", "se", "count"]].assign(panel=p)
             for p, g in (("inter_child_time_s", dt), ("n_children", n),
                          ("f_density", h))]
    return pd.concat(parts, ignore_index=True)[["panel", "f", "mean", "se",
                                                "count"]]


def execution_profile_data(d: Path):
    df = _read_csv(d, "execution_profile.csv")
    if df is None:
        return None
    return df.assign(diagonal=df["x"])


def child_profile_data(d: Path):
    df = _read_csv(d, "child_profile.csv")
    fits = _read_json(d, "child_fit.json")
    if df is None or fits is None:
        return None
    i = df["rank"].to_numpy()
    return df.assign(fit=_child(fits.get("fit"), i),
                     fit_i0_zero=_child(fits.get("fit_i0_zero"), i))


def ecology_data(d: Path):
    return _read_csv(d, "ecology_histograms.csv")


def single_mo_data(d: Path):
    a = _read_csv(d, "single_mo_all.csv")
    z = _read_csv(d, "single_mo_no_immediate.csv")
    fits = _read_json(d, "single_mo_fit.json")
    if a is None or z is None or fits is None:
        return None
    parts = []
    for name, df, key in (("all_orders", a, "all_orders"),
                          ("no_immediate_impact", z, "no_immediate_impact")):
        x = _centres(df)
        parts.append(df.assign(stratum=name, x=x,
                               fit=_power(fits[key].get("fit"), x)))
    out = pd.concat(parts, ignore_index=True)
    return out[["stratum", "x", "mean", "se", "count", "fit"]]


def impact_data(d: Path):
    real = _read_csv(d, "impact_curve.csv")
    real_fit = _read_json(d, "impact_fit.json")
    if real is None:
        real = _read_csv(d, "shuffle_real_curve.csv")
        real_fit = (_read_json(d, "shuffle.json") or {}).get("real")
    if real is None:
        return None
    parts = [("real", real, real_fit)]
    syn = _read_csv(d, "shuffle_synthetic_curve.csv")
    if syn is not None:
        parts.append(("synthetic", syn,
                      (_read_json(d, "shuffle.json") or {}).get("synthetic")))
    out = []
    for name, df, fit in parts:
        x = _centres(df)
        out.append(df.assign(curve=name, x=x,
                             fit=_power((fit or {}).get("fit"), x)))
    out = pd.concat(out, ignore_index=True)
    return out[["curve", "x", "mean", "se", "count", "fit"]]


def refill_lengths_data(d: Path):
    df = _read_csv(d, "refill_lengths.csv")
    meta = _read_json(d, "refill.json")
    if df is None:
        return None
    tail = (meta or {}).get("length_tail") or {}
    mu, x_min = tail.get("exponent"), tail.get("x_min")
    fit = np.full(len(df), np.nan)
    if mu is not None and x_min is not None:
        sel = df["n"] >= x_min
        mass = df.loc[sel, "psi"].sum()
        n = df["n"].to_numpy(dtype=float)
        from scipy.special import zeta

        fit = np.where(sel, mass * n ** -mu / zeta(mu, x_min), np.nan)
    return df.assign(fit=fit)


def refill_functions_data(d: Path):
    return _read_csv(d, "refill_profiles.csv")


def liquidity_share_data(d: Path):
    return _read_csv(d, "liquidity_share.csv")


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _new_fig(n_panels: int = 1):
    from matplotlib.figure import Figure

    fig = Figure(figsize=(4.2 * n_panels, 3.4))
    axes = fig.subplots(1, n_panels, squeeze=False)[0]
    return fig, axes


def _errorbar(ax, x, y, se, label=None, **kw):
    se = np.where(np.isfinite(se), se, 0.0)
    ax.errorbar(x, y, yerr=se, fmt="o", ms=3, capsize=2, label=label, **kw)


def _render_stylized(df, fig_axes):
    fig, ax = fig_axes
    for a, (panel, ylab) in zip(ax, (("inter_child_time_s", "mean spacing (s)"),
                                     ("n_children", "mean N"),
                                     ("f_density", "density per log10 f"))):
        g = df[df["panel"] == panel]
        _errorbar(a, g["f"], g["mean"], g["se"].to_numpy(dtype=float))
        a.set_xscale("log")
        a.set_xlabel("f = Q / V_D")
        a.set_ylabel(ylab)
        if panel != "f_density":
            a.set_yscale("log")


def _render_profile(df, fig_axes):
    fig, (ax,) = fig_axes
    ax.plot(df["x"], df["executed_fraction"], "o-", ms=3, label="measured")
    ax.plot(df["x"], df["diagonal"], "k--", lw=1, label="constant rate")
    ax.set_xlabel("rescaled time")
    ax.set_ylabel("executed fraction")
    ax.legend()


def _render_child(df, fig_axes):
    fig, (ax,) = fig_axes
    _errorbar(ax, df["rank"], df["mean"], df["se"].to_numpy(dtype=float),
              label="measured")
    ax.plot(df["rank"], df["fit"], "-", label="fit")
    ax.plot(df["rank"], df["fit_i0_zero"], ":", label="fit, i0 = 0")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("child rank i")
    ax.set_ylabel("rescaled impact")
    ax.legend()


def _render_ecology(df, fig_axes):
    fig, (ax,) = fig_axes
    mid = 0.5 * (df["bin_lo"] + df["bin_hi"])
    w = float((df["bin_hi"] - df["bin_lo"]).iloc[0]) / 3.2
    for k, col in enumerate(("fast_volume_share", "fast_count_share",
                             "against_fast_share")):
        ax.bar(mid + (k - 1) * w, df[col], width=w, label=col)
    ax.set_xlabel("share per session")
    ax.set_ylabel("sessions")
    ax.legend()


def _render_curves(key):
    def render(df, fig_axes):
        fig, (ax,) = fig_axes
        for k, (name, g) in enumerate(df.groupby(key, sort=False)):
            color = f"C{k}"
            # Log axes: non-positive bin means stay in the CSV only.
            pos = g[g["mean"] > 0]
            _errorbar(ax, pos["x"], pos["mean"], pos["se"].to_numpy(dtype=float),
                      label=name, color=color)
            ok = np.isfinite(g["fit"]) & (g["fit"] > 0)
            if ok.any():
                ax.plot(g["x"][ok], g["fit"][ok], "-", lw=1, color=color)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("rescaled size")
        ax.set_ylabel("rescaled impact")
        ax.legend()
    return render


def _render_lengths(df, fig_axes):
    fig, (ax,) = fig_axes
    ax.plot(df["n"], df["psi"], "o", ms=3, label="empirical")
    ok = np.isfinite(df["fit"])
    if ok.any():
        ax.plot(df["n"][ok], df["fit"][ok], "-", label="power-law tail")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("sequence length n")
    ax.set_ylabel("frequency")
    ax.legend()


def _render_refill(df, fig_axes):
    fig, (ax,) = fig_axes
    for name, g in df.groupby("provider_hash", sort=True):
        ax.plot(g["i"], g["K"], "o-", ms=2, lw=0.8, label=name[:8])
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("position in sequence i")
    ax.set_ylabel("refill probability")
    if df["provider_hash"].nunique() <= 10:
        ax.legend(fontsize=6)


def _render_share(df, fig_axes):
    fig, (ax,) = fig_axes
    ax.plot(df["C"], df["liq_share"], "o", ms=4)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("C")
    ax.set_ylabel("share of provided liquidity")


FIGURES = (
    ("stylized_facts", stylized_facts_data, _render_stylized, 3),
    ("execution_profile", execution_profile_data, _render_profile, 1),
    ("child_profile", child_profile_data, _render_child, 1),
    ("ecology_participation", ecology_data, _render_ecology, 1),
    ("single_mo_impact", single_mo_data, _render_curves("stratum"), 1),
    ("impact_real_synthetic", impact_data, _render_curves("curve"), 1),
    ("refill_lengths", refill_lengths_data, _render_lengths, 1),
    ("refill_functions", refill_functions_data, _render_refill, 1),
    ("liquidity_share", liquidity_share_data, _render_share, 1),
)


def render_svg(df: pd.DataFrame, render, n_panels: int = 1) -> bytes:
    import matplotlib

    with matplotlib.rc_context(RC):
        fig, axes = _new_fig(n_panels)
        render(df, (fig, axes))
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def build_report(directory, svg: bool = True) -> dict:
    """Write every figure whose inputs exist; returns ``{name: [paths]}``
    and the list of skipped figures under the ``"skipped"`` key."""
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d} is not a directory")
    out = d / "report"
    written, skipped = {}, []
    for name, build, render, panels in FIGURES:
        df = build(d)
        if df is None or df.empty:
            skipped.append(name)
            continue
        csv_path = out / f"{name}.csv"
        atomic_write_bytes(csv_path, df.to_csv(index=False, lineterminator="\n",
                                               float_format="%.10g").encode())
        paths = [csv_path]
        if svg:
            svg_path = out / f"{name}.svg"
            atomic_write_bytes(svg_path, render_svg(df, render, panels))
            paths.append(svg_path)
        written[name] = paths
    if not written:
        raise DataError(f"no analysis outputs found in {d}")
    index = {"figures": {k: [p.name for p in v] for k, v in written.items()},
             "skipped": skipped}
    atomic_write_text(out / "index.json",
                      json.dumps(index, indent=2, sort_keys=True) + "\n")
    written["skipped"] = skipped
    return written
