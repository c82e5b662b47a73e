"""Command-line front end.

    lassohdi fit        --input data.csv --out coef.csv
    lassohdi intervals  --input data.csv --out intervals.csv --methods pipe_p,lqa_p
    lassohdi simulate   --study coverage --dist laplace --n 100 --p 101 --reps 50 --seed 7 --out runs/
    lassohdi scenario   --id 1 --reps 100 --out runs/

Errors are reported as one JSON object on stderr with a nonzero exit code.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .estimator import analyze
from .intervals import CSV_COLUMNS, POSTERIOR_METHODS, Method, fmt_float, parse_methods
from .model_core import Dataset
from .simulation import (
    CoefficientSpec,
    CoefKind,
    DesignKind,
    DesignSpec,
    SCENARIO_METHODS,
    run_correlated_pair_study,
    run_coverage_experiment,
    run_scenario4_experiments,
)

MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class CsvTable:
    y: np.ndarray
    X: np.ndarray
    names: list
    response: str
    dropped: list = field(default_factory=list)


def _resolve_response(header, response) -> int:
    if response is None:
        return 0
    if response in header:
        return header.index(response)
    try:
        idx = int(response)
    except ValueError:
        raise DataError(f"response column {response!r} not found in header") from None
    if not 0 <= idx < len(header):
        raise DataError(f"response column index {idx} out of range (0..{len(header) - 1})")
    return idx


def read_table(path, response=None) -> CsvTable:
    """Numeric CSV with a header row. Rows and columns in errors are 1-based
    file coordinates (the header is row 1)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("input file is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError("need a response column and at least one feature column")
    yi = _resolve_response(header, response)
    body = rows[1:]
    if not body:
        raise DataError("input has a header but no data rows")
    vals = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} fields, expected {len(header)}", row=i)
        for j, cell in enumerate(row):
            s = cell.strip()
            if s.lower() in MISSING:
                raise DataError(
                    f"missing value at row {i}, column {j + 1} ({header[j]})", row=i, column=j + 1
                )
            try:
                v = float(s)
            except ValueError:
                raise DataError(
                    f"cannot parse {cell!r} at row {i}, column {j + 1} ({header[j]})", row=i, column=j + 1
                ) from None
            if not math.isfinite(v):
                raise DataError(
                    f"non-finite value {cell!r} at row {i}, column {j + 1} ({header[j]})", row=i, column=j + 1
                )
            vals[i - 2, j] = v
    feat = [j for j in range(len(header)) if j != yi]
    X = vals[:, feat]
    names = [header[j] for j in feat]
    const = np.ptp(X, axis=0) == 0
    dropped = [names[j] for j in np.flatnonzero(const)]
    keep = ~const
    if not keep.any():
        raise DataError("every feature column is constant")
    return CsvTable(vals[:, yi], X[:, keep], [n for n, k in zip(names, keep) if k], header[yi], dropped)


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _sidecar_path(out) -> Path:
    return Path(out).with_suffix(".json")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _run_analysis(args, methods):
    table = read_table(args.input, args.response)
    res = analyze(
        Dataset(table.y, table.X, table.names), alpha=args.alpha, methods=methods, k=args.k, seed=args.seed
    )
    sidecar = {
        "input": str(args.input),
        "response": table.response,
        "n": int(table.X.shape[0]),
        "p": int(table.X.shape[1]),
        "seed": args.seed,
        "k_folds": args.k,
        "alpha": args.alpha,
        "methods": [m.value for m in methods],
        "lambda_cv": res.cv.lambda_cv,
        "lambda": res.fit.lam,
        "sigma2_hat": res.variance.sigma2_hat,
        "active_set_size": int(res.fit.n_active),
        "active_set": [table.names[j] for j in res.fit.active_set],
        "converged": bool(res.fit.converged),
        "scale": "original",
        "warnings": [f"dropped constant feature column {name!r}" for name in table.dropped],
        "dropped_columns": table.dropped,
    }
    return table, res, sidecar


def cmd_fit(args) -> int:
    table, res, sidecar = _run_analysis(args, [])
    coef, intercept = res.design.to_original_scale(res.fit.beta)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["feature", "name", "coef", "std_coef"])
    for j, name in enumerate(table.names):
        w.writerow([j, name, fmt_float(coef[j]), fmt_float(res.fit.beta[j])])
    sidecar["intercept"] = intercept
    _write(args.out, buf.getvalue())
    _write(_sidecar_path(args.out), _json(sidecar))
    return 0


def cmd_intervals(args) -> int:
    methods = parse_methods(args.methods)
    table, res, sidecar = _run_analysis(args, methods)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    undefined = {}
    for m in methods:
        s = res.intervals[m].to_original_scale(res.design)
        w.writerows(s.rows())
        undefined[m.value] = int((~s.defined).sum())
    sidecar["undefined_records"] = undefined
    _write(args.out, buf.getvalue())
    _write(_sidecar_path(args.out), _json(sidecar))
    return 0


def _write_report(report, out: Path, per_coefficient: bool, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.csv", report.to_csv())
    _write(out / "summary.json", report.to_json())
    if per_coefficient:
        _write(out / "per_coefficient.csv", report.per_coefficient_csv())
    for name, text in (extra or {}).items():
        _write(out / name, text)


def cmd_simulate(args) -> int:
    methods = parse_methods(args.methods) if args.methods else None
    if args.study == "pair":
        report, dump = run_correlated_pair_study(
            args.reps, args.alpha, args.seed,
            methods=methods or (Method.RLP, Method.PIPEP, Method.LQAP),
            workers=args.workers, k=args.k, rho=args.rho if args.rho is not None else 0.99,
        )
        _write_report(report, Path(args.out), args.per_coefficient, {"pair_intervals.csv": dump.to_csv()})
        return 0
    rho = args.rho or 0.0
    dkind = DesignKind.AR1 if rho != 0 else DesignKind.IID_NORMAL
    cspec = CoefficientSpec(CoefKind(args.dist), args.p, target_snr=args.snr, sigma2=args.sigma2)
    dspec = DesignSpec(dkind, args.n, args.p, rho=rho)
    report = run_coverage_experiment(
        cspec, dspec, args.reps, args.alpha, methods or POSTERIOR_METHODS, args.seed, args.workers, args.k
    )
    _write_report(report, Path(args.out), args.per_coefficient)
    return 0


def cmd_scenario(args) -> int:
    methods = parse_methods(args.methods) if args.methods else SCENARIO_METHODS
    report = run_scenario4_experiments(args.id, args.reps, args.alpha, args.seed, methods, args.workers, args.k)
    _write_report(report, Path(args.out), args.per_coefficient)
    return 0


def _alpha(s):
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {s}")
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _method_list(s):
    try:
        return parse_methods(x.strip() for x in s.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lassohdi", description="Lasso fits with high-dimensional intervals.")
    ap.add_argument("--version", action="version", version=f"lassohdi {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--alpha", type=_alpha, default=0.2, help="interval level is 1 - alpha (default 0.2)")
        p.add_argument("--k", type=_positive_int, default=10, help="cross-validation folds (default 10)")

    for name, helptext in (("fit", "fit the lasso at the CV lambda"), ("intervals", "lasso intervals for a CSV")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", required=True, help="CSV with a header row")
        p.add_argument("--response", default=None, help="response column name or 0-based index (default: first)")
        p.add_argument("--seed", type=int, default=0, help="fold assignment seed (default 0)")
        p.add_argument("--out", required=True, help="output CSV; a .json sidecar is written next to it")
        common(p)
        if name == "intervals":
            p.add_argument("--methods", type=_method_list, default=[Method.PIPEP, Method.LQAP],
                           help="comma-separated methods (default pipe_p,lqa_p)")

    p = sub.add_parser("simulate", help="Monte-Carlo coverage experiment")
    p.add_argument("--study", choices=("coverage", "pair"), default="coverage")
    p.add_argument("--dist", choices=[k.value for k in CoefKind if k not in (CoefKind.CUSTOM, CoefKind.CORRELATED_PAIR)],
                   default="laplace")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--p", type=_positive_int, default=101)
    p.add_argument("--rho", type=float, default=None, help="AR(1) correlation (coverage) or pair correlation")
    p.add_argument("--sigma2", type=float, default=100.0)
    p.add_argument("--snr", type=float, default=1.0)

    q = sub.add_parser("scenario", help="relevant-coverage scenarios 1-4 (n = 50)")
    q.add_argument("--id", type=int, choices=(1, 2, 3, 4), required=True)

    for p_ in (p, q):
        p_.add_argument("--reps", type=_positive_int, default=100)
        p_.add_argument("--seed", type=int, required=p_ is p, default=0,
                        help="master seed" + (" (required)" if p_ is p else " (default 0)"))
        p_.add_argument("--methods", type=_method_list, default=None)
        p_.add_argument("--workers", type=int, default=-1, help="parallel workers (default: all cores)")
        p_.add_argument("--out", required=True, help="output directory")
        p_.add_argument("--per-coefficient", action="store_true", help="also write per_coefficient.csv")
        common(p_)
    return ap


COMMANDS = {"fit": cmd_fit, "intervals": cmd_intervals, "simulate": cmd_simulate, "scenario": cmd_scenario}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # reported, not raised: callers read stderr
        err = {"error": type(exc).__name__, "message": str(exc)}
        for key in ("row", "column"):
            if getattr(exc, key, None) is not None:
                err[key] = getattr(exc, key)
        sys.stderr.write(json.dumps(err) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
