"""Data generators and Monte-Carlo coverage/width experiments.

Each replicate gets its own seeds derived from the master seed and the
replicate index, so results do not depend on how replicates are scheduled
across workers.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats
from threadpoolctl import threadpool_limits

from .cross_validation import SaturatedFitError, cross_validate, fit_at_cv_lambda
from .intervals import MODE_CONTAINING, POSTERIOR_METHODS, Method, compute_intervals, fmt_float, parse_methods
from .model_core import Dataset, lambda_grid, standardize

# absolute slack (scaled by max(1, |beta|)) for the mode-containment check
MODE_SLACK = 1e-9


class CoefKind(str, enum.Enum):
    LAPLACE = "laplace"
    T3 = "t"
    NORMAL = "normal"
    UNIFORM = "uniform"
    BETA = "beta"
    SPARSE1 = "sparse1"
    SPARSE2 = "sparse2"
    SPARSE3 = "sparse3"
    CORRELATED_PAIR = "correlated_pair"
    CUSTOM = "custom"


QUANTILE_KINDS = (CoefKind.LAPLACE, CoefKind.T3, CoefKind.NORMAL, CoefKind.UNIFORM, CoefKind.BETA)
_PPF = {
    CoefKind.LAPLACE: stats.laplace.ppf,
    CoefKind.T3: lambda q: stats.t.ppf(q, 3),
    CoefKind.NORMAL: stats.norm.ppf,
    CoefKind.UNIFORM: lambda q: stats.uniform.ppf(q, loc=-1.0, scale=2.0),
    CoefKind.BETA: lambda q: stats.beta.ppf(q, 0.1, 0.1) - 0.5,
}


def _normal_quantiles(m: int) -> np.ndarray:
    return stats.norm.ppf(np.arange(1, m + 1) / (m + 1))


@dataclass
class CoefficientSpec:
    """How the true coefficient vector is built.

    Quantile kinds and the sparse layouts are rescaled so that
    ``beta'beta = target_snr * sigma2``; ``correlated_pair`` and ``custom``
    are used as given.
    """

    kind: CoefKind
    p: int
    target_snr: float = 1.0
    sigma2: float = 100.0
    values: Optional[Sequence[float]] = None

    def __post_init__(self):
        self.kind = CoefKind(self.kind)
        if self.p < 1:
            raise ValueError("p must be positive")
        if not (self.target_snr > 0 and self.sigma2 > 0):
            raise ValueError("target_snr and sigma2 must be positive")
        if self.kind is CoefKind.CUSTOM:
            if self.values is None or len(self.values) != self.p:
                raise ValueError("custom coefficients need exactly p values")
            self.values = [float(v) for v in self.values]
        sparse_len = {CoefKind.SPARSE1: 10, CoefKind.SPARSE2: 30, CoefKind.SPARSE3: 50}
        if self.kind in sparse_len and self.p < sparse_len[self.kind]:
            raise ValueError(f"{self.kind.value} needs p >= {sparse_len[self.kind]}")
        if self.kind is CoefKind.CORRELATED_PAIR and self.p < 3:
            raise ValueError("correlated_pair needs p >= 3")

    def coefficients(self) -> np.ndarray:
        p = self.p
        if self.kind is CoefKind.CUSTOM:
            return np.array(self.values)
        if self.kind is CoefKind.CORRELATED_PAIR:
            b = np.zeros(p)
            b[0] = 1.0
            return b
        b = np.zeros(p)
        if self.kind in QUANTILE_KINDS:
            b = _PPF[self.kind](np.arange(1, p + 1) / (p + 1))
        elif self.kind is CoefKind.SPARSE1:
            v = np.array([0.5, 0.5, 0.5, 1.0, 2.0])
            b[:10] = np.r_[v, -v]
        elif self.kind is CoefKind.SPARSE2:
            b[:30] = _normal_quantiles(30)
        else:
            b[:50] = _normal_quantiles(50)
        return b * math.sqrt(self.target_snr * self.sigma2 / (b @ b))


class DesignKind(str, enum.Enum):
    IID_NORMAL = "iid"
    AR1 = "ar1"
    CORRELATED_PAIR = "pair"


@dataclass
class DesignSpec:
    kind: DesignKind
    n: int
    p: int
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.kind = DesignKind(self.kind)
        if self.n < 2 or self.p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if not -1 < self.rho < 1:
            raise ValueError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.kind is DesignKind.CORRELATED_PAIR and self.p < 2:
            raise ValueError("a correlated pair needs p >= 2")

    def correlation_root(self) -> np.ndarray:
        """Lower-triangular square root of the feature correlation matrix."""
        p = self.p
        if self.kind is DesignKind.AR1:
            idx = np.arange(p)
            R = self.rho ** np.abs(idx[:, None] - idx[None, :])
        else:
            R = np.eye(p)
            if self.kind is DesignKind.CORRELATED_PAIR:
                R[0, 1] = R[1, 0] = self.rho
        return np.linalg.cholesky(R)


def generate_dataset(cspec: CoefficientSpec, dspec: DesignSpec, seed: Optional[int] = None):
    """Draw ``(Dataset, beta_true)`` with ``y = X beta + eps``."""
    if cspec.p != dspec.p:
        raise ValueError(f"coefficient spec has p={cspec.p} but design spec has p={dspec.p}")
    rng = np.random.default_rng(dspec.seed if seed is None else seed)
    beta = cspec.coefficients()
    Z = rng.standard_normal((dspec.n, dspec.p))
    X = Z if dspec.kind is DesignKind.IID_NORMAL else Z @ dspec.correlation_root().T
    y = X @ beta + math.sqrt(cspec.sigma2) * rng.standard_normal(dspec.n)
    return Dataset(y, X), beta


def replicate_seeds(master_seed: int, rep: int) -> tuple[int, int]:
    """(data seed, fold seed) for one replicate."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(rep),))
    a, b = ss.generate_state(2, dtype=np.uint64)
    return int(a), int(b)


@dataclass
class MethodResult:
    """One method's intervals for one replicate, in original units."""

    lower: np.ndarray
    upper: np.ndarray
    estimate: np.ndarray
    defined: np.ndarray
    covered: np.ndarray
    mode_violations: int

    @property
    def width(self) -> np.ndarray:
        return np.where(self.defined, self.upper - self.lower, np.inf)


@dataclass
class ReplicateResult:
    rep: int
    seed: int
    cv_seed: int
    lambda_cv: float
    sigma2_hat: float
    selected: np.ndarray
    methods: dict


@dataclass
class ReplicateFailure:
    rep: int
    seed: int
    error: str


def _mode_violations(iset) -> int:
    if iset.method not in MODE_CONTAINING:
        return 0
    b = iset.lasso_estimate
    slack = MODE_SLACK * np.maximum(1.0, np.abs(b))
    d = iset.defined
    ok = (iset.lower[d] - slack[d] <= b[d]) & (b[d] <= iset.upper[d] + slack[d])
    return int(np.count_nonzero(~ok))


def run_replicate(cspec, dspec, rep, master_seed, alpha, methods, k=10):
    """Everything one replicate produces; a ``ReplicateFailure`` if it cannot finish."""
    seed, cv_seed = replicate_seeds(master_seed, rep)
    with threadpool_limits(1):
        data, beta = generate_dataset(cspec, dspec, seed)
        design = standardize(data)
        try:
            cv = cross_validate(design, k, lambda_grid(design), seed=cv_seed)
            fit, var = fit_at_cv_lambda(design, cv)
        except (SaturatedFitError, np.linalg.LinAlgError) as exc:
            return ReplicateFailure(rep, seed, str(exc))
        sets = compute_intervals(design, fit, var.sigma2_hat, alpha, methods)
        out = {}
        for m, s in sets.items():
            o = s.to_original_scale(design)
            out[m] = MethodResult(
                lower=o.lower,
                upper=o.upper,
                estimate=o.estimate,
                defined=o.defined,
                covered=o.contains(beta),
                mode_violations=_mode_violations(s),
            )
    selected = np.zeros(design.p, dtype=bool)
    selected[fit.active_set] = True
    return ReplicateResult(rep, seed, cv_seed, fit.lam, var.sigma2_hat, selected, out)


def _quartiles(w: np.ndarray):
    w = w[np.isfinite(w)]
    if w.size == 0:
        return (math.nan,) * 3
    q1, med, q3 = np.percentile(w, [25, 50, 75])
    return float(q1), float(med), float(q3)


REPORT_COLUMNS = (
    "replicate", "seed", "method", "average_coverage", "relevant_average_coverage",
    "median_width", "q1_width", "q3_width", "n_selected", "n_defined", "mode_violations",
    "lambda_cv", "sigma2_hat",
)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else fmt_float(v)
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    return obj


@dataclass
class ExperimentReport:
    """Replicate results in replicate order plus the configuration that made them."""

    config: dict
    beta_true: np.ndarray
    methods: list
    replicates: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    width_scope: str = "all"

    def __post_init__(self):
        if self.width_scope not in ("all", "selected"):
            raise ValueError("width_scope must be 'all' or 'selected'")

    @property
    def n_completed(self) -> int:
        return len(self.replicates)

    def _width_mask(self, r: ReplicateResult) -> np.ndarray:
        return r.selected if self.width_scope == "selected" else np.ones_like(r.selected)

    @property
    def per_replicate(self) -> list[dict]:
        rows = []
        for r in self.replicates:
            for m in self.methods:
                mr = r.methods[m]
                sel = r.selected
                w = mr.width[self._width_mask(r)]
                q1, med, q3 = _quartiles(w)
                rows.append({
                    "replicate": r.rep,
                    "seed": r.seed,
                    "method": m.value,
                    "average_coverage": float(mr.covered.mean()),
                    "relevant_average_coverage": float(mr.covered[sel].mean()) if sel.any() else math.nan,
                    "median_width": med,
                    "q1_width": q1,
                    "q3_width": q3,
                    "n_selected": int(sel.sum()),
                    "n_defined": int(mr.defined.sum()),
                    "mode_violations": mr.mode_violations,
                    "lambda_cv": r.lambda_cv,
                    "sigma2_hat": r.sigma2_hat,
                })
        return rows

    def per_coefficient(self, method) -> np.ndarray:
        """Coverage indicators, replicates x p."""
        m = parse_methods([method])[0]
        return np.array([r.methods[m].covered for r in self.replicates], dtype=bool).reshape(-1, self.beta_true.size)

    def widths(self, method) -> np.ndarray:
        """Pooled finite widths over the width scope, all replicates."""
        m = parse_methods([method])[0]
        parts = [r.methods[m].width[self._width_mask(r)] for r in self.replicates]
        w = np.concatenate(parts) if parts else np.empty(0)
        return w[np.isfinite(w)]

    def mode_violations(self) -> int:
        return sum(r.methods[m].mode_violations for r in self.replicates for m in self.methods)

    def summary(self) -> dict:
        rows = self.per_replicate
        out = {}
        for m in self.methods:
            mine = [row for row in rows if row["method"] == m.value]
            cov = np.array([row["average_coverage"] for row in mine])
            rel = np.array([row["relevant_average_coverage"] for row in mine])
            rel = rel[~np.isnan(rel)]
            q1, med, q3 = _quartiles(self.widths(m))
            out[m.value] = {
                "mean_average_coverage": float(cov.mean()) if cov.size else math.nan,
                "sd_average_coverage": float(cov.std(ddof=1)) if cov.size > 1 else math.nan,
                "mean_relevant_average_coverage": float(rel.mean()) if rel.size else math.nan,
                "sd_relevant_average_coverage": float(rel.std(ddof=1)) if rel.size > 1 else math.nan,
                "n_relevant_missing": int(len(mine) - rel.size),
                "median_width": med,
                "q1_width": q1,
                "q3_width": q3,
                "mode_violations": int(sum(row["mode_violations"] for row in mine)),
            }
        return out

    def to_dict(self) -> dict:
        return _json_safe({
            "config": self.config,
            "n_completed": self.n_completed,
            "n_failed": len(self.failures),
            "failures": [asdict(f) for f in self.failures],
            "width_scope": self.width_scope,
            "summary": self.summary(),
        })

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(REPORT_COLUMNS)
        for row in self.per_replicate:
            w.writerow([_cell(row[c]) for c in REPORT_COLUMNS])
        return _emit(buf, path)

    def per_coefficient_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        p = self.beta_true.size
        w.writerow(["replicate", "method"] + [f"c{j}" for j in range(p)])
        w.writerow(["beta_true", ""] + [fmt_float(b) for b in self.beta_true])
        for r in self.replicates:
            for m in self.methods:
                w.writerow([r.rep, m.value] + [int(c) for c in r.methods[m].covered])
        return _emit(buf, path)


def _emit(buf: io.StringIO, path) -> str:
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _run(cspec, dspec, n_reps, alpha, methods, master_seed, workers, k, width_scope, extra=None):
    if n_reps < 1:
        raise ValueError("n_reps must be at least 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    methods = parse_methods(methods)
    jobs = (delayed(run_replicate)(cspec, dspec, rep, master_seed, alpha, methods, k) for rep in range(n_reps))
    results = Parallel(n_jobs=workers)(jobs)
    config = {
        "coefficients": {"kind": cspec.kind.value, "p": cspec.p, "target_snr": cspec.target_snr, "sigma2": cspec.sigma2},
        "design": {"kind": dspec.kind.value, "n": dspec.n, "p": dspec.p, "rho": dspec.rho},
        "n_reps": n_reps,
        "alpha": alpha,
        "methods": [m.value for m in methods],
        "master_seed": int(master_seed),
        "k_folds": k,
    }
    config.update(extra or {})
    report = ExperimentReport(config, cspec.coefficients(), methods, width_scope=width_scope)
    # Parallel preserves submission order, so this is replicate order
    for r in results:
        (report.failures if isinstance(r, ReplicateFailure) else report.replicates).append(r)
    return report


def run_coverage_experiment(
    cspec: CoefficientSpec,
    dspec: DesignSpec,
    n_reps: int,
    alpha: float = 0.2,
    methods: Iterable = POSTERIOR_METHODS,
    master_seed: int = 0,
    workers: int = 1,
    k: int = 10,
) -> ExperimentReport:
    return _run(cspec, dspec, n_reps, alpha, methods, master_seed, workers, k, "all")


SCENARIO_METHODS = (Method.PIPEP, Method.LQAP, Method.RELAXED_LASSO)
# p, number of signals, signal magnitude; signs alternate +, -, +, ...
SCENARIOS = {1: (16, 4, 5.0), 2: (100, 4, 5.0), 3: (50, 10, 1.0), 4: (100, 50, 0.5)}
SCENARIO_N = 50


def scenario_specs(scenario: int) -> tuple[CoefficientSpec, DesignSpec]:
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {sorted(SCENARIOS)}, got {scenario}")
    p, m, size = SCENARIOS[scenario]
    b = np.zeros(p)
    b[:m] = size * np.where(np.arange(m) % 2 == 0, 1.0, -1.0)
    return (
        CoefficientSpec(CoefKind.CUSTOM, p, sigma2=1.0, values=b),
        DesignSpec(DesignKind.IID_NORMAL, SCENARIO_N, p),
    )


def run_scenario4_experiments(
    scenario: int,
    n_reps: int,
    alpha: float = 0.2,
    master_seed: int = 0,
    methods: Iterable = SCENARIO_METHODS,
    workers: int = 1,
    k: int = 10,
) -> ExperimentReport:
    """One of the four relevant-coverage scenarios; widths are over selected features."""
    cspec, dspec = scenario_specs(scenario)
    return _run(cspec, dspec, n_reps, alpha, methods, master_seed, workers, k, "selected", {"scenario": scenario})


PAIR_FEATURES = {"A": 0, "B": 1, "N1": 2}
PAIR_COLUMNS = ("method", "feature", "replicate", "lower", "upper", "midpoint", "width", "covered", "defined", "selected", "both_selected")


def pair_specs(n: int = 100, p: int = 100, rho: float = 0.99) -> tuple[CoefficientSpec, DesignSpec]:
    return (
        CoefficientSpec(CoefKind.CORRELATED_PAIR, p, sigma2=1.0),
        DesignSpec(DesignKind.CORRELATED_PAIR, n, p, rho=rho),
    )


@dataclass
class PairDump:
    """Per-replicate intervals for A, B and N1, sorted by midpoint within (method, feature)."""

    rows: list

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(PAIR_COLUMNS)
        for row in self.rows:
            w.writerow([_cell(row[c]) for c in PAIR_COLUMNS])
        return _emit(buf, path)


def pair_dump(report: ExperimentReport) -> PairDump:
    rows = []
    for m in report.methods:
        for name, j in PAIR_FEATURES.items():
            block = []
            for r in report.replicates:
                mr = r.methods[m]
                lo, hi = float(mr.lower[j]), float(mr.upper[j])
                block.append({
                    "method": m.value,
                    "feature": name,
                    "replicate": r.rep,
                    "lower": lo,
                    "upper": hi,
                    "midpoint": (lo + hi) / 2,
                    "width": hi - lo,
                    "covered": bool(mr.covered[j]),
                    "defined": bool(mr.defined[j]),
                    "selected": bool(r.selected[j]),
                    "both_selected": bool(r.selected[0] and r.selected[1]),
                })
            # undefined intervals (NaN midpoint) sort last; ties keep replicate order
            block.sort(key=lambda d: (math.isnan(d["midpoint"]), d["midpoint"] if not math.isnan(d["midpoint"]) else 0.0))
            rows.extend(block)
    return PairDump(rows)


def run_correlated_pair_study(
    n_reps: int,
    alpha: float = 0.2,
    master_seed: int = 0,
    methods: Iterable = (Method.RLP, Method.PIPEP, Method.LQAP),
    workers: int = 1,
    k: int = 10,
    rho: float = 0.99,
) -> tuple[ExperimentReport, PairDump]:
    """Only ``beta_A = 1`` is nonzero and ``cor(x_A, x_B) = rho``; features are A=0, B=1, N1=2."""
    cspec, dspec = pair_specs(rho=rho)
    report = _run(cspec, dspec, n_reps, alpha, methods, master_seed, workers, k, "all", {"study": "correlated_pair"})
    return report, pair_dump(report)
