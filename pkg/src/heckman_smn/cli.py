"""Command-line interface: ``fit``, ``simulate``, ``replicate`` and ``compare``.

Exit codes: 0 ok, 2 usage or parse error, 3 sampler failure, 4 reports not comparable.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .inference import FitReport, summarize
from .nuts import SamplerConfig, SamplerError, run_chains
from .sel_model import FAMILIES, MODEL_LABELS, SelectionData
from .sim_gen import SimConfig, parse_error_family, run_replication, simulate

log = logging.getLogger("heckman_smn")

EXIT_OK, EXIT_PARSE, EXIT_SAMPLER, EXIT_MISMATCH = 0, 2, 3, 4
MISSING_TOKENS = ("", "NA")
FORMATS = ("json", "csv", "table")


class ParseError(ValueError):
    """Input problem reported with exit code 2."""


# -- csv io ----------------------------------------------------------------------------


def fmt(x: float) -> str:
    """17 significant digits: enough for an exact float round trip."""
    return format(float(x), ".17g")


def read_table(path) -> Dict[str, List[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError(f"{path}: duplicate column names in header")
    cols: Dict[str, List[str]] = {h: [] for h in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        for h, v in zip(header, row):
            cols[h].append(v.strip())
    return cols


def _numeric(path, cols, name, allow_missing=False) -> np.ndarray:
    if name not in cols:
        raise ParseError(f"{path}: no column named {name!r}")
    out = np.empty(len(cols[name]))
    for i, v in enumerate(cols[name]):
        if allow_missing and v in MISSING_TOKENS:
            out[i] = np.nan
            continue
        try:
            out[i] = float(v)
        except ValueError:
            raise ParseError(f"{path}: line {i + 2}, column {name!r}: cannot parse {v!r} as a number") from None
        if not np.isfinite(out[i]):
            raise ParseError(f"{path}: line {i + 2}, column {name!r}: non-finite value {v!r}")
    return out


def load_data(path, outcome: str, x_cols: Sequence[str], w_cols: Sequence[str],
              selection: Optional[str] = None, intercept: bool = True) -> SelectionData:
    """Read a CSV into :class:`SelectionData`; missing outcome (empty or NA) means unselected."""
    cols = read_table(path)
    y = _numeric(path, cols, outcome, allow_missing=True)
    if selection:
        c = _numeric(path, cols, selection)
        if not np.all((c == 0) | (c == 1)):
            raise ParseError(f"{path}: column {selection!r} must hold 0/1 values")
        bad = np.flatnonzero((c == 1) == np.isnan(y))
        if bad.size:
            raise ParseError(f"{path}: line {bad[0] + 2}: selection flag disagrees with outcome missingness")
    else:
        c = (~np.isnan(y)).astype(int)
    n = y.size

    def design(names):
        mats = [np.ones(n)] if intercept else []
        mats += [_numeric(path, cols, nm) for nm in names]
        if not mats:
            raise ParseError("a design matrix needs at least one column")
        return np.column_stack(mats)

    try:
        return SelectionData(y, c, design(x_cols), design(w_cols),
                             x_names=(["(Intercept)"] if intercept else []) + list(x_cols),
                             w_names=(["(Intercept)"] if intercept else []) + list(w_cols))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_dataset(path, sample, n_x: int = 1, n_w: int = 2):
    """Columns ``y, c, x1.., w1..`` (no intercept columns)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["y", "c"] + [f"x{j + 1}" for j in range(n_x)] + [f"w{k + 1}" for k in range(n_w)])
        for i in range(sample.y.size):
            y = "NA" if np.isnan(sample.y[i]) else fmt(sample.y[i])
            row = [y, str(int(sample.c[i]))]
            row += [fmt(v) for v in sample.x[i, 1 : 1 + n_x]]
            row += [fmt(v) for v in sample.w[i, 1 : 1 + n_w]]
            wr.writerow(row)


def write_draws(path, draws):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["chain", "draw"] + list(draws.names) + ["divergent", "tree_depth", "accept_stat"])
        for c, (th, ch) in enumerate(zip(draws.params, draws.chains)):
            for s in range(th.shape[0]):
                wr.writerow([c, s] + [fmt(v) for v in th[s]]
                            + [int(ch.divergent[s]), int(ch.tree_depth[s]), fmt(ch.accept_stat[s])])


def read_draws(path) -> Dict[str, np.ndarray]:
    cols = read_table(path)
    return {k: np.array([float(v) for v in vals]) for k, vals in cols.items()}


def write_density(path, draws, bins: int = 60):
    """Histogram densities per parameter, ready for plotting."""
    th = draws.merged()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["parameter", "x", "density"])
        for j, nm in enumerate(draws.names):
            dens, edges = np.histogram(th[:, j], bins=bins, density=True)
            mids = 0.5 * (edges[1:] + edges[:-1])
            for x, d in zip(mids, dens):
                wr.writerow([nm, fmt(x), fmt(d)])


# -- manifest --------------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(args: argparse.Namespace, extra: Optional[Dict] = None) -> Dict:
    import scipy

    m = {
        "command": args.command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "software": {
            "heckman_smn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if getattr(args, "input", None):
        m["input_sha256"] = _sha256(args.input)
    if extra:
        m.update(extra)
    return m


def _dump(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


# -- commands --------------------------------------------------------------------------


def sampler_config(args, chains_default=1) -> SamplerConfig:
    return SamplerConfig(
        warmup=args.warmup, draws=args.draws, thin=args.thin,
        chains=args.chains if args.chains is not None else chains_default,
        max_treedepth=args.max_treedepth, target_accept=args.target_accept, seed=args.seed,
        init=args.init, threads=args.threads,
    )


def _split_cols(s: str) -> List[str]:
    return [c.strip() for c in s.split(",") if c.strip()] if s else []


def cmd_fit(args) -> int:
    x_cols, w_cols = _split_cols(args.x), _split_cols(args.w)
    if not x_cols or not w_cols:
        raise ParseError("--x and --w must each name at least one column")
    if args.exclusion and args.exclusion not in w_cols:
        raise ParseError(f"exclusion variable {args.exclusion!r} must be among the selection covariates")
    data = load_data(args.input, args.outcome, x_cols, w_cols, args.selection, not args.no_intercept)
    cfg = sampler_config(args)
    formats = set(_split_cols(args.formats))
    if not formats <= set(FORMATS):
        raise ParseError(f"--formats must be drawn from {FORMATS}")

    draws = run_chains(data, family=args.family, config=cfg, progress=_progress(args, cfg))
    report = summarize(draws, data)
    report.model["outcome_covariates"] = list(data.x_names or [])
    report.model["selection_covariates"] = list(data.w_names or [])
    report.manifest = manifest(args, {"sampler": asdict(cfg)})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "csv" in formats:
        write_draws(out / "draws.csv", draws)
        write_density(out / "density.csv", draws)
    if "json" in formats:
        _dump(out / "report.json", report.to_dict())
    if "table" in formats:
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    _dump(out / "manifest.json", report.manifest)
    for w in report.diagnostics.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    if not args.quiet:
        print(report.to_text(), end="")
    return EXIT_OK


def cmd_simulate(args) -> int:
    fam = parse_error_family(args.error, args.nu, args.nu1, args.nu2)
    cfg = SimConfig(n=args.n, error_family=fam, seed=args.seed, replicates=1)
    sample = simulate(cfg, np.random.default_rng(np.random.SeedSequence([args.seed, 0, 0])))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, sample)
    truth = cfg.truth_dict()
    truth["missing_rate"] = sample.missing_rate
    _dump(out.with_name("truth.json") if args.truth is None else args.truth, truth)
    _dump(out.with_name(out.stem + ".manifest.json"), manifest(args))
    if not args.quiet:
        print(f"wrote {out} (n={cfg.n}, missing rate {sample.missing_rate:.3f})")
    return EXIT_OK


def cmd_replicate(args) -> int:
    fam = parse_error_family(args.error, args.nu, args.nu1, args.nu2)
    cfg = SimConfig(n=args.n, error_family=fam, replicates=args.replicates, seed=args.seed)
    scfg = sampler_config(args)
    models = _split_cols(args.models)
    bad = [m for m in models if m not in FAMILIES]
    if bad or not models:
        raise ParseError(f"--models must be a comma list drawn from {FAMILIES}")

    def progress(i, m):
        if not args.quiet:
            print(f"replicate {i + 1}/{cfg.replicates}: fitting {MODEL_LABELS[m]}", file=sys.stderr, flush=True)

    rep = run_replication(cfg, models, scfg, workers=args.threads, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_json(out / "replication.json")
    rep.to_csv(out / "replication.csv")
    _dump(out / "truth.json", cfg.truth_dict())
    _dump(out / "manifest.json", manifest(args, {"sampler": asdict(scfg)}))
    if not args.quiet:
        print(json.dumps({"criteria": rep.mean_criteria(), "selection_percent": rep.selection_percentages(),
                          "failures": rep.n_failures}, indent=2))
    return EXIT_OK


def compare_reports(reports: Sequence[FitReport], labels: Sequence[str]) -> str:
    units = {r.model.get("n_units") for r in reports}
    if len(units) != 1:
        raise ComparisonError(f"reports cover different numbers of units: {sorted(map(str, units))}")
    keys = [("LOOIC", "looic", min), ("WAIC", "waic", min), ("CPO (LPML)", "lpml", max)]
    width = max(12, *(len(lb) for lb in labels))
    lines = [f"{'criterion':<12}" + "".join(f"{lb:>{width + 2}}" for lb in labels)]
    for title, key, pick in keys:
        vals = [float(r.criteria[key]) if r.criteria.get(key) is not None else float("nan") for r in reports]
        best = pick(range(len(vals)), key=lambda i: vals[i])
        cells = [f"{v:.3f}" + ("*" if i == best else " ") for i, v in enumerate(vals)]
        lines.append(f"{title:<12}" + "".join(f"{c:>{width + 2}}" for c in cells))
    lines.append("* marks the preferred model (lowest LOOIC/WAIC, highest LPML)")
    return "\n".join(lines) + "\n"


class ComparisonError(ValueError):
    pass


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise ParseError("compare needs at least two report.json files")
    reports, labels = [], []
    for p in args.reports:
        try:
            with open(p, encoding="utf-8") as fh:
                d = json.load(fh)
            reports.append(FitReport.from_dict(d))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"{p}: not a readable report ({exc})") from None
        labels.append(d["model"].get("label", str(p)))
    print(compare_reports(reports, labels), end="")
    return EXIT_OK


def _progress(args, cfg):
    if args.quiet:
        return None
    total = cfg.warmup + cfg.draws
    step = max(1, total // 10)

    def cb(i, chain, ndiv):
        if (i + 1) % step == 0:
            print(f"chain {chain}: {i + 1}/{total} iterations, {ndiv} divergent", file=sys.stderr, flush=True)

    return cb


# -- parser ---------------------------------------------------------------------------


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _add_sampler_flags(p, draws=20000, thin=5):
    g = p.add_argument_group("sampler")
    g.add_argument("--warmup", type=_nonneg_int, default=1000)
    g.add_argument("--draws", type=_positive_int, default=draws)
    g.add_argument("--thin", type=_positive_int, default=thin)
    g.add_argument("--chains", type=_positive_int, default=None)
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--target-accept", type=float, default=0.85)
    g.add_argument("--max-treedepth", type=_nonneg_int, default=10)
    g.add_argument("--init", choices=("two-step", "random"), default="two-step")
    g.add_argument("--threads", type=_positive_int, default=1)


def _add_error_flags(p):
    p.add_argument("--error", default="normal", choices=("normal", "t", "slash", "cn"), help="error law of the generated data")
    p.add_argument("--nu", type=float, default=None, help="t df (default 3) or slash parameter (default 1.43)")
    p.add_argument("--nu1", type=float, default=0.25, help="contaminated normal: mixing proportion")
    p.add_argument("--nu2", type=float, default=0.1, help="contaminated normal: variance factor")
    p.add_argument("--n", type=int, default=400)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="heckman-smn", description="Bayesian Heckman selection models with heavy-tailed errors")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a selection model to a CSV file")
    f.add_argument("input", type=Path)
    f.add_argument("--outcome", required=True, help="outcome column; empty or NA marks unselected units")
    f.add_argument("--selection", default=None, help="0/1 selection column (inferred from missingness if omitted)")
    f.add_argument("--x", required=True, help="comma-separated outcome covariates")
    f.add_argument("--w", required=True, help="comma-separated selection covariates")
    f.add_argument("--exclusion", default=None, help="covariate that must appear among the selection covariates")
    f.add_argument("--family", choices=FAMILIES, default="normal")
    f.add_argument("--no-intercept", action="store_true", help="do not add intercept columns")
    f.add_argument("--out", type=Path, default=Path("fit_out"))
    f.add_argument("--formats", default="json,csv,table")
    f.add_argument("--quiet", action="store_true")
    _add_sampler_flags(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    _add_error_flags(s)
    s.add_argument("--seed", type=_nonneg_int, default=0)
    s.add_argument("--out", type=Path, default=Path("simulated.csv"))
    s.add_argument("--truth", type=Path, default=None, help="where to write the generating values (default: truth.json next to the dataset)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replicate", help="Monte Carlo study over generated datasets")
    _add_error_flags(r)
    r.add_argument("--replicates", type=_positive_int, default=10)
    r.add_argument("--models", default="normal,t,cn")
    r.add_argument("--out", type=Path, default=Path("replication_out"))
    r.add_argument("--quiet", action="store_true")
    _add_sampler_flags(r, draws=3000, thin=1)
    r.set_defaults(func=cmd_replicate)

    c = sub.add_parser("compare", help="compare criteria across fitted reports")
    c.add_argument("reports", nargs="+", type=Path)
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ComparisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except ValueError as exc:
        # configuration values rejected by the dataclasses
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
