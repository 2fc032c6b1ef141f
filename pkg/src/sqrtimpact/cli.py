"""Command line entry point.

Every subcommand reads a tape (or, for ``report``, a directory of earlier
outputs) and writes its results atomically into an output directory, which
defaults to the directory holding the tape.  Each run merges an entry into
``manifest.json`` there: the normalized options and their hash, digests of
the inputs, the seed(s), the tool version and digests of every file written.

Option values resolve in this order: command-line flag, environment
variable ``SQRTIMPACT_<OPTION>`` (upper case, dashes as underscores, e.g.
``SQRTIMPACT_SEED=7`` or ``SQRTIMPACT_MIN_BIN_COUNT=50``), the ``--config``
JSON file, then the built-in default.  For ``simulate`` the config file may
also carry a ``"sim"`` object of simulator settings laid over the preset.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 fit error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._io import atomic_write_bytes, atomic_write_text, file_digest
from .errors import ConfigError, DataError, FitError, SqrtImpactError

ENV_PREFIX = "SQRTIMPACT_"
EXIT_USAGE, EXIT_DATA, EXIT_FIT = 2, 3, 4
MANIFEST = "manifest.json"


class UsageError(ConfigError):
    pass


# ---------------------------------------------------------------------------
# Option resolution
# ---------------------------------------------------------------------------

# dest -> (type, default); None entries take their default from the parser.
COMMON = {"seed": (int, 0), "jobs": (int, 1), "config": (str, None),
          "out": (str, None)}


def _resolve(args: argparse.Namespace, specs: dict) -> dict:
    """Fill options left unset on the command line from the environment,
    then the config file, then the defaults in ``specs``."""
    cfg_path = args.config if args.config is not None \
        else os.environ.get(ENV_PREFIX + "CONFIG")
    file_cfg = {}
    if cfg_path:
        try:
            file_cfg = json.loads(Path(cfg_path).read_text())
        except FileNotFoundError as e:
            raise UsageError(f"config file not found: {cfg_path}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {cfg_path} is not JSON: {e}") from e
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
    allowed = set(specs) | {"sim"}
    unknown = set(file_cfg) - allowed
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: "
                         f"{sorted(unknown)}")
    opts = {"config": cfg_path}
    for dest, (typ, default) in specs.items():
        if dest == "config":
            continue
        val = getattr(args, dest, None)
        if val is None:
            env = os.environ.get(ENV_PREFIX + dest.upper())
            if env is not None:
                try:
                    val = _convert(typ, env)
                except ValueError as e:
                    raise UsageError(f"{ENV_PREFIX}{dest.upper()}: {e}") from e
            elif dest in file_cfg:
                val = file_cfg[dest]
            else:
                val = default
        opts[dest] = val
    opts["sim"] = file_cfg.get("sim", {})
    if opts.get("jobs") is not None and opts["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    return opts


def _convert(typ, text: str):
    if typ is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off", ""):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return typ(text)


def _config_hash(opts: dict) -> str:
    keep = {k: v for k, v in opts.items() if k not in ("out", "config")}
    blob = json.dumps(keep, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

class Run:
    """Collects outputs of one subcommand and writes the manifest."""

    def __init__(self, command: str, opts: dict, out_dir: Path, inputs=()):
        self.command = command
        self.opts = opts
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = [Path(p) for p in inputs if p is not None]
        self.outputs: list[Path] = []
        self.seeds: list[int] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def csv(self, name: str, df: pd.DataFrame) -> Path:
        p = self.path(name)
        atomic_write_bytes(p, df.to_csv(index=False, lineterminator="\n",
                                        float_format="%.10g").encode())
        return p

    def json(self, name: str, obj) -> Path:
        p = self.path(name)
        atomic_write_text(p, json.dumps(_plain(obj), indent=2, sort_keys=True,
                                        allow_nan=True) + "\n")
        return p

    def add(self, paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def finish(self) -> dict:
        entry = {
            "command": self.command,
            "options": {k: v for k, v in sorted(self.opts.items())
                        if k != "out"},
            "config_hash": _config_hash(self.opts),
            "inputs": {_rel(p, self.out): file_digest(p)
                       for p in sorted(set(self.inputs)) if p.exists()},
            "seeds": self.seeds,
            "version": __version__,
            "outputs": {_rel(p, self.out): file_digest(p)
                        for p in sorted(set(self.outputs)) if p.exists()},
        }
        mpath = self.out / MANIFEST
        manifest = {"tool": "sqrtimpact", "runs": {}}
        if mpath.exists():
            try:
                manifest = json.loads(mpath.read_text())
            except json.JSONDecodeError:
                pass
        manifest.setdefault("runs", {})[self.command] = entry
        atomic_write_text(mpath, json.dumps(_plain(manifest), indent=2,
                                            sort_keys=True) + "\n")
        return entry


def _rel(p: Path, base: Path) -> str:
    try:
        return str(p.resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p)


def _plain(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values and
    non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _out_dir(opts: dict, tape_path) -> Path:
    if opts.get("out"):
        return Path(opts["out"])
    return Path(tape_path).parent if tape_path else Path(".")


def _stock_id(tape_path) -> str:
    from .tape import meta_path, read_meta

    mp = meta_path(tape_path)
    return read_meta(mp).stock_id if mp.exists() else Path(tape_path).stem


def _load_sessions(tape_path, on_error: str = "raise", report=None):
    from .tape import ParseReport, parse_tape, split_sessions

    if not Path(tape_path).exists():
        raise DataError(f"tape not found: {tape_path}")
    report = report if report is not None else ParseReport()
    sessions = split_sessions(parse_tape(tape_path, on_error=on_error,
                                         report=report), _stock_id(tape_path))
    if not sessions:
        raise DataError(f"{tape_path}: no events inside trading sessions")
    return sessions


def _pmap(func, items, jobs: int):
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(func, items, chunksize=max(1, len(items) // (4 * jobs))))


def _reconstruct(sessions, jobs: int, gap_split_s=None):
    from functools import partial

    from .metaorder import MetaorderSet

    parts = _pmap(partial(_reconstruct_one, gap_split_s=gap_split_s),
                  sessions, jobs)
    parts = [p for p in parts if p is not None]
    if not parts:
        raise DataError("no session has enough market orders")
    return MetaorderSet.concat(parts)


def _stream_metaorders(tape_path, jobs: int, gap_split_s=None):
    """Reconstruct batch by batch while streaming the tape, so only a few
    sessions are ever in memory.  Returns the metaorders and session count."""
    from functools import partial
    from itertools import islice

    from .metaorder import MetaorderSet
    from .tape import iter_sessions, parse_tape

    if not Path(tape_path).exists():
        raise DataError(f"tape not found: {tape_path}")
    stream = iter_sessions(parse_tape(tape_path), _stock_id(tape_path))
    step = max(1, 8 * jobs)
    parts, n = [], 0
    while batch := list(islice(stream, step)):
        n += len(batch)
        parts += _pmap(partial(_reconstruct_one, gap_split_s=gap_split_s), batch, jobs)
    if not n:
        raise DataError(f"{tape_path}: no events inside trading sessions")
    parts = [p for p in parts if p is not None]
    if not parts:
        raise DataError("no session has enough market orders")
    return MetaorderSet.concat(parts), n


def _reconstruct_one(session, gap_split_s=None):
    from .errors import TooFewOrders
    from .metaorder import reconstruct

    try:
        return reconstruct(session, gap_split_s)
    except TooFewOrders:
        return None


def _edges(opts: dict):
    from .binning import log_edges

    return log_edges(opts["f_lo"], opts["f_hi"], opts["per_decade"])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(opts, args) -> Run:
    from .tape import ParseReport, seasonality_by_year, seasonality_frame

    rep = ParseReport()
    sessions = _load_sessions(args.tape, opts["on_error"], rep)
    run = Run("ingest", opts, _out_dir(opts, args.tape), [args.tape])
    rows = []
    for s in sessions:
        rows.append({"session": s.label, "date": s.date.isoformat(),
                     "half": s.half, "n_events": len(s.events), "V_D": s.V_D,
                     "sigma_D": s.sigma_D, "flags": ";".join(sorted(s.flags))})
    run.csv("sessions.csv", pd.DataFrame(rows))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prof = seasonality_by_year(sessions, opts["bin_minutes"])
    run.csv("seasonality.csv", seasonality_frame(prof))
    dropped = pd.DataFrame(rep.dropped, columns=["line", "reason"])
    if len(dropped):
        run.csv("dropped_rows.csv", dropped)
    run.json("ingest.json", {"n_rows": rep.n_rows, "n_dropped": len(dropped),
                             "n_sessions": len(sessions),
                             "stock_id": sessions[0].stock_id})
    return run


def cmd_metaorders(opts, args) -> Run:
    from .metaorder import execution_profile, n_vs_f_exponent, stylized_facts

    ms, n_sessions = _stream_metaorders(args.tape, opts["jobs"], opts["gap_split_s"])
    run = Run("metaorders", opts, _out_dir(opts, args.tape), [args.tape])
    run.csv("metaorders.csv", ms.to_frame())
    facts = stylized_facts(ms, _edges(opts))
    run.csv("facts_inter_child_time.csv", facts.dt)
    run.csv("facts_child_count.csv", facts.n_children)
    run.csv("facts_f_hist.csv", facts.f_hist)
    summary = {"n_metaorders": len(ms), "n_sessions": n_sessions,
               "f_mode": facts.f_mode(), "mean_N": float(np.mean(ms.N))}
    try:
        slope, se = n_vs_f_exponent(facts)
        summary["n_vs_f_exponent"] = {"value": slope, "se": se}
    except SqrtImpactError:
        summary["n_vs_f_exponent"] = None
    prof = execution_profile(ms, opts["profile_bins"], opts["profile_mode"])
    run.csv("execution_profile.csv", prof.to_frame())
    summary["execution_profile"] = {"mode": prof.mode, "count": prof.count,
                                    "n_degenerate": prof.n_degenerate,
                                    "max_deviation": prof.max_deviation()}
    run.json("metaorders.json", summary)
    return run


def cmd_impact(opts, args) -> Run:
    from .impact import metaorder_impact_curve, write_curve

    ms, n_sessions = _stream_metaorders(args.tape, opts["jobs"], opts["gap_split_s"])
    curve = metaorder_impact_curve(ms, _edges(opts), opts["min_bin_count"],
                                   opts["t_strata"])
    curve.extra.update(n_metaorders=len(ms), n_sessions=n_sessions)
    run = Run("impact", opts, _out_dir(opts, args.tape), [args.tape])
    write_curve(curve, run.path("impact_curve.csv"), run.path("impact_fit.json"))
    strata = [c.to_frame().assign(stratum=k) for k, c in curve.strata.items()]
    if strata:
        df = pd.concat(strata, ignore_index=True)
        run.csv("impact_strata.csv", df[df["count"] > 0])
    return run


def cmd_child_profile(opts, args) -> Run:
    from .impact import child_impact_profile

    ms, n_sessions = _stream_metaorders(args.tape, opts["jobs"], opts["gap_split_s"])
    prof = child_impact_profile(ms, opts["i_max"])
    run = Run("child-profile", opts, _out_dir(opts, args.tape), [args.tape])
    run.csv("child_profile.csv", prof.to_frame())
    run.json("child_fit.json", prof.fit_dict())
    return run


def cmd_single_mo(opts, args) -> Run:
    import warnings

    from .impact import single_mo_impact
    from .tape import seasonality_by_year, seasonality_from_frame

    sessions = _load_sessions(args.tape)
    inputs = [args.tape]
    if opts["seasonality"]:
        path = Path(opts["seasonality"])
        if not path.exists():
            raise DataError(f"seasonality table not found: {path}")
        prof = seasonality_from_frame(pd.read_csv(path))
        inputs.append(path)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prof = seasonality_by_year(sessions)
        if len(prof) == 1:
            prof = next(iter(prof.values()))
    res = single_mo_impact(sessions, prof, _edges(opts), opts["min_bin_count"])
    run = Run("single-mo", opts, _out_dir(opts, args.tape), inputs)
    for name, c in (("single_mo_all.csv", res.all_orders),
                    ("single_mo_no_immediate.csv", res.no_immediate)):
        df = c.to_frame()
        run.csv(name, df[df["count"] > 0])
    run.json("single_mo_fit.json", res.fit_dict())
    return run


def ids_preserved(session, seed: int) -> bool:
    """True when the shuffle leaves the multiset of trader IDs unchanged."""
    from .errors import TooFewOrders
    from .shuffle import shuffle_ids

    try:
        sh = shuffle_ids(session, seed)
    except TooFewOrders:
        return True
    a = session.events.trader_id
    b = sh.session.events.trader_id
    rows = sh.market_rows
    other = np.ones(len(a), dtype=bool)
    other[rows] = False
    counts = [pd.Series(x[rows]).value_counts().sort_index() for x in (a, b)]
    return bool(np.array_equal(a[other], b[other])
                and counts[0].equals(counts[1]))


def _shuffle_one(seed, sessions, edges, min_bin_count, real_curve):
    from .shuffle import compare_curves, synthetic_pipeline

    res = synthetic_pipeline(sessions, seed, edges, min_bin_count)
    cmp = compare_curves(real_curve, res.curve)
    preserved = all(ids_preserved(s, seed) for s in sessions)
    row = {"seed": seed, "chi2": cmp.chi2, "dof": cmp.dof,
           "p_value": cmp.p_value, "ids_preserved": preserved,
           "n_skipped": res.n_skipped,
           "synthetic_exponent": res.curve.fit.exponent if res.curve.fit else None}
    row.update(res.size_summary())
    return row, res.curve


def cmd_shuffle(opts, args) -> Run:
    from .impact import metaorder_impact_curve, write_curve

    sessions = _load_sessions(args.tape)
    edges = _edges(opts)
    ms = _reconstruct(sessions, opts["jobs"], None)
    real = metaorder_impact_curve(ms, edges, opts["min_bin_count"], 1)
    seeds = [opts["seed"] + k for k in range(opts["n_seeds"])]
    rows, first = [], None
    for s in seeds:
        row, curve = _shuffle_one(s, sessions, edges, opts["min_bin_count"],
                                  real)
        rows.append(row)
        first = curve if first is None else first
    run = Run("shuffle", opts, _out_dir(opts, args.tape), [args.tape])
    run.seeds = seeds
    write_curve(real, run.path("shuffle_real_curve.csv"))
    write_curve(first, run.path("shuffle_synthetic_curve.csv"))
    table = pd.DataFrame(rows)
    run.csv("shuffle_seeds.csv", table)
    p = table["p_value"].to_numpy(dtype=float)
    run.json("shuffle.json", {
        "real": real.fit_dict(), "synthetic": first.fit_dict(),
        "real_sizes": {"n_metaorders": len(ms), "mean_Q": float(np.mean(ms.Q)),
                       "median_Q": float(np.median(ms.Q)),
                       "mean_N": float(np.mean(ms.N))},
        "n_seeds": len(seeds), "alpha": opts["alpha"],
        "pass_fraction": float(np.mean(p > opts["alpha"])),
        "ids_preserved_fraction": float(table["ids_preserved"].mean()),
    })
    return run


def cmd_ecology(opts, args) -> Run:
    from .ecology import (class_summary, classify_sessions, histogram_mode,
                          participation_histograms)

    sessions = _load_sessions(args.tape)
    res = classify_sessions(sessions, market_only=opts["market_only"])
    run = Run("ecology", opts, _out_dir(opts, args.tape), [args.tape])
    run.csv("ecology_sessions.csv", pd.DataFrame([r.summary() for r in res]))
    hist = participation_histograms(res)
    run.csv("ecology_histograms.csv", hist)
    run.csv("ecology_classes.csv", class_summary(res, opts["k_min"]))
    run.json("ecology.json", {
        "n_sessions": len(res),
        "modes": {c: histogram_mode(hist, c) for c in
                  ("fast_volume_share", "fast_count_share",
                   "against_fast_share")},
        "mean_fast_volume_share": float(np.nanmean([r.fast_volume_share for r in res])),
        "mean_fast_count_share": float(np.nanmean([r.fast_count_share for r in res])),
    })
    return run


def cmd_refill(opts, args) -> Run:
    from .refill import (extract_all, fit_providers, fits_frame,
                         length_distribution, liquidity_share_vs_C,
                         provider_hash, share_rank_correlation)

    sessions = _load_sessions(args.tape)
    rs = extract_all(sessions)
    dist = length_distribution(rs)
    fits = fit_providers(rs, opts["top"], opts["min_sequences"])
    salt = opts["salt"]
    run = Run("refill", opts, _out_dir(opts, args.tape), [args.tape])
    run.csv("refill_lengths.csv", dist.hist)
    run.csv("refill_fits.csv", fits_frame(fits, salt))
    prof = [f.profile.assign(provider_hash=provider_hash(f.provider_id, salt),
                             fit=f.C * f.profile["i"].to_numpy(dtype=float)
                             ** -f.kappa)
            for f in fits if f.profile is not None]
    if prof:
        df = pd.concat(prof, ignore_index=True).rename(columns={"mean": "K"})
        run.csv("refill_profiles.csv",
                df[["provider_hash", "i", "K", "se", "count", "fit"]])
    summary = {"n_sequences": int(len(rs.lengths())),
               "length_tail": asdict(dist.tail) | {"exponent_se": dist.tail.exponent_se},
               "n_fitted_providers": len(fits)}
    if len(fits) >= 2:
        run.csv("liquidity_share.csv", liquidity_share_vs_C(fits, opts["smooth"]))
        summary["share_rank_correlation"] = share_rank_correlation(fits)
    run.json("refill.json", summary)
    return run


def cmd_simulate(opts, args) -> Run:
    from .simulator import PRESETS, SimConfig, simulate_to_files

    if opts["preset"] not in PRESETS:
        raise UsageError(f"unknown preset {opts['preset']!r}; choose from "
                         f"{sorted(PRESETS)}")
    cfg = PRESETS[opts["preset"]](seed=opts["seed"])
    over = dict(opts["sim"])
    if opts["sessions"] is not None:
        over["n_sessions"] = opts["sessions"]
    over["seed"] = opts["seed"]
    try:
        cfg = SimConfig.from_dict(cfg.to_dict() | over)
    except TypeError as e:
        raise UsageError(str(e)) from e
    out = Path(opts["out"] or ".")
    run = Run("simulate", opts, out, [opts["config"]] if opts["config"] else [])
    run.seeds = [cfg.seed]
    paths = simulate_to_files(cfg, out, opts["format"], opts["jobs"])
    run.add(paths.values())
    return run


def cmd_report(opts, args) -> Run:
    from .report import build_report

    d = Path(args.directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    run = Run("report", opts | {"out": None}, d,
              sorted(p for p in d.iterdir() if p.suffix in (".csv", ".json")
                     and p.name != MANIFEST and p.name != "tape.csv"))
    written = build_report(d, svg=not opts["no_svg"])
    run.add(p for k, v in written.items() if k != "skipped" for p in v)
    run.add([d / "report" / "index.json"])
    return run


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

BINNING = {"f_lo": (float, 1e-6), "f_hi": (float, 1.0),
           "per_decade": (int, 4), "min_bin_count": (int, 50)}
GAP = {"gap_split_s": (float, None)}

COMMANDS = {
    "ingest": (cmd_ingest, "parse, validate and split a tape; write session "
               "statistics and the intraday seasonality table",
               {"on_error": (str, "raise"), "bin_minutes": (int, 15)}),
    "metaorders": (cmd_metaorders, "reconstruct metaorders; write stylized "
                   "facts and the execution profile",
                   BINNING | GAP | {"profile_bins": (int, 20),
                                    "profile_mode": (str, "slot")}),
    "impact": (cmd_impact, "square-root law curve, fit and T strata",
               BINNING | GAP | {"t_strata": (int, 3)}),
    "child-profile": (cmd_child_profile, "impact profile versus child rank "
                      "and its (A, i0, beta) fit",
                      GAP | {"i_max": (int, 50)}),
    "single-mo": (cmd_single_mo, "impact of single market orders in volume "
                  "time", BINNING | {"seasonality": (str, None)}),
    "shuffle": (cmd_shuffle, "trader-id shuffle test against the real "
                "impact curve",
                BINNING | {"n_seeds": (int, 1), "alpha": (float, 0.01)}),
    "ecology": (cmd_ecology, "fast/slow classification and participation "
                "histograms", {"market_only": (bool, False),
                               "k_min": (int, 5)}),
    "refill": (cmd_refill, "refill sequence lengths and per-provider refill "
               "functions", {"top": (int, 100), "min_sequences": (int, 30),
                             "salt": (str, "sqrtimpact"),
                             "smooth": (bool, True)}),
    "simulate": (cmd_simulate, "generate a synthetic tape with its "
                 "ground-truth ledger",
                 {"preset": (str, "paper-like"), "sessions": (int, None),
                  "format": (str, "csv")}),
    "report": (cmd_report, "render CSV and SVG figure analogues from a "
               "directory of earlier outputs", {"no_svg": (bool, False)}),
}

CHOICES = {"on_error": ("raise", "skip"), "profile_mode": ("step", "slot"),
           "format": ("csv", "binary")}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sqrtimpact",
                description="Metaorder impact analysis and simulation.",
                epilog=f"Options may also be set through {ENV_PREFIX}<OPTION> "
                       "environment variables or a --config JSON file.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND",
                           parser_class=_Parser)
    sub.required = True
    for name, (_, help_text, specs) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        if name == "report":
            sp.add_argument("directory")
        elif name != "simulate":
            sp.add_argument("tape")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--config", default=None, help="JSON options file")
        sp.add_argument("-o", "--out", default=None, help="output directory")
        for dest, (typ, default) in specs.items():
            flag = "--" + dest.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=dest, default=None,
                                action=argparse.BooleanOptionalAction,
                                help=f"default {default}")
            else:
                sp.add_argument(flag, dest=dest, type=typ, default=None,
                                choices=CHOICES.get(dest),
                                help=f"default {default}")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func, _, specs = COMMANDS[args.command]
    try:
        opts = _resolve(args, COMMON | specs)
        for dest, allowed in CHOICES.items():
            if dest in opts and opts[dest] not in allowed:
                raise UsageError(f"{dest} must be one of {allowed}")
        run = func(opts, args)
        run.finish()
    except ConfigError as e:
        print(f"sqrtimpact {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"sqrtimpact {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FitError as e:
        print(f"sqrtimpact {args.command}: fit error: {e}", file=sys.stderr)
        return EXIT_FIT
    print(json.dumps({"command": args.command,
                      "out": str(run.out),
                      "outputs": sorted(_rel(p, run.out) for p in set(run.outputs))}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
