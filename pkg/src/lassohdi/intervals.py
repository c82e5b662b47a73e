"""High-dimensional interval constructors built on a fitted lasso.

Four posterior-based methods share the piecewise Gaussian posterior and differ
only in the likelihood center and the projection used for its variance:

=================  ==========================  ========================
method             center                      quadratic form
=================  ==========================  ========================
full_conditional   z_j                         n
rl_p               OLS-type beta~_j            x_j' Q x_j (full)
pipe_p             z_j                         x_j' Q x_j (full)
lqa_p              z_j                         x_j' Q~ x_j (LQA partial)
=================  ==========================  ========================

``relaxed_lasso`` is the OLS-refit comparator with Gaussian intervals.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.special import ndtri

from .model_core import LassoFit, StandardizedDesign, partial_residual_correlation, soft_threshold
from .posterior import posterior_intervals
from .projection import RCOND_MIN, ProjectionKind, _rcond, projection_batch


class Method(str, enum.Enum):
    FULL_CONDITIONAL = "full_conditional"
    RLP = "rl_p"
    PIPEP = "pipe_p"
    LQAP = "lqa_p"
    RELAXED_LASSO = "relaxed_lasso"

    def __str__(self):
        return self.value


POSTERIOR_METHODS = (Method.FULL_CONDITIONAL, Method.RLP, Method.PIPEP, Method.LQAP)
# methods whose posterior mode is the lasso estimate
MODE_CONTAINING = (Method.FULL_CONDITIONAL, Method.PIPEP, Method.LQAP)

CSV_COLUMNS = ("feature", "name", "estimate", "lower", "upper", "method", "defined", "lasso_estimate")


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _json_float(x: float):
    # JSON has no NaN or infinity
    x = float(x)
    return x if np.isfinite(x) else None


@dataclass
class IntervalRecord:
    feature: int
    estimate: float
    lower: float
    upper: float
    method: Method
    defined: bool
    lasso_estimate: float
    name: Optional[str] = None

    @property
    def width(self) -> float:
        return self.upper - self.lower if self.defined else np.inf


@dataclass
class IntervalSet:
    """Intervals for every feature from one method, stored column-wise."""

    method: Method
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    defined: np.ndarray
    lasso_estimate: np.ndarray
    alpha: float
    lambda_cv: float
    sigma2_hat: float
    active_set: np.ndarray
    feature_names: Optional[list[str]] = None

    def __len__(self):
        return self.estimate.size

    @property
    def width(self) -> np.ndarray:
        return np.where(self.defined, self.upper - self.lower, np.inf)

    @property
    def records(self) -> list[IntervalRecord]:
        names = self.feature_names or [None] * len(self)
        return [
            IntervalRecord(
                feature=j,
                estimate=float(self.estimate[j]),
                lower=float(self.lower[j]),
                upper=float(self.upper[j]),
                method=self.method,
                defined=bool(self.defined[j]),
                lasso_estimate=float(self.lasso_estimate[j]),
                name=names[j],
            )
            for j in range(len(self))
        ]

    def contains(self, values) -> np.ndarray:
        """Coverage indicators; undefined intervals never cover."""
        values = np.asarray(values, dtype=float)
        return self.defined & (self.lower <= values) & (values <= self.upper)

    def to_original_scale(self, design: StandardizedDesign) -> "IntervalSet":
        s = design.col_scales
        return IntervalSet(
            method=self.method,
            estimate=self.estimate / s,
            lower=self.lower / s,
            upper=self.upper / s,
            defined=self.defined.copy(),
            lasso_estimate=self.lasso_estimate / s,
            alpha=self.alpha,
            lambda_cv=self.lambda_cv,
            sigma2_hat=self.sigma2_hat,
            active_set=self.active_set,
            feature_names=self.feature_names,
        )

    def rows(self) -> list[list[str]]:
        names = self.feature_names or [f"x{j}" for j in range(len(self))]
        return [
            [
                str(j),
                names[j],
                fmt_float(self.estimate[j]),
                fmt_float(self.lower[j]),
                fmt_float(self.upper[j]),
                self.method.value,
                "true" if self.defined[j] else "false",
                fmt_float(self.lasso_estimate[j]),
            ]
            for j in range(len(self))
        ]

    def to_csv(self, path=None, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        if header:
            w.writerow(CSV_COLUMNS)
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "alpha": self.alpha,
            "lambda_cv": _json_float(self.lambda_cv),
            "sigma2_hat": _json_float(self.sigma2_hat),
            "active_set": [int(k) for k in self.active_set],
            "records": [
                {
                    "feature": r.feature,
                    "name": r.name if r.name is not None else f"x{r.feature}",
                    "estimate": _json_float(r.estimate),
                    "lower": _json_float(r.lower),
                    "upper": _json_float(r.upper),
                    "method": r.method.value,
                    "defined": r.defined,
                    "lasso_estimate": _json_float(r.lasso_estimate),
                }
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)


def _check(sigma2, alpha):
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def _posterior_set(method, design, fit, sigma2, alpha, center, quadform, defined):
    q = np.where(defined, quadform, 1.0)
    lower, upper = posterior_intervals(center, fit.lam, q, sigma2, alpha)
    lower = np.where(defined, lower, np.nan)
    upper = np.where(defined, upper, np.nan)
    if method is Method.RLP:
        est = np.where(defined, soft_threshold(center, fit.lam), np.nan)
    else:
        est = fit.beta.copy()
    return IntervalSet(
        method=method,
        estimate=est,
        lower=lower,
        upper=upper,
        defined=defined.copy(),
        lasso_estimate=fit.beta.copy(),
        alpha=float(alpha),
        lambda_cv=fit.lam,
        sigma2_hat=float(sigma2),
        active_set=fit.active_set.copy(),
        feature_names=design.feature_names,
    )


def full_conditional_intervals(design, fit: LassoFit, sigma2: float, alpha: float = 0.2) -> IntervalSet:
    _check(sigma2, alpha)
    z = partial_residual_correlation(design, fit)
    return _posterior_set(
        Method.FULL_CONDITIONAL, design, fit, sigma2, alpha, z,
        np.full(design.p, float(design.n)), np.ones(design.p, dtype=bool),
    )


def pipe_p_intervals(design, fit: LassoFit, sigma2: float, alpha: float = 0.2, projection=None) -> IntervalSet:
    """Center ``z_j``, variance from the full projection off ``S_j``."""
    _check(sigma2, alpha)
    proj = projection if projection is not None else projection_batch(design, fit.active_set)
    z = partial_residual_correlation(design, fit)
    return _posterior_set(Method.PIPEP, design, fit, sigma2, alpha, z, proj.quadform, proj.defined)


def lqa_p_intervals(design, fit: LassoFit, sigma2: float, alpha: float = 0.2) -> IntervalSet:
    """As PIPE-P, with the LQA partial projection evaluated at the lasso fit."""
    _check(sigma2, alpha)
    if fit.lam > 0:
        proj = projection_batch(design, fit.active_set, ProjectionKind.LQA_PARTIAL, fit.lam, fit.beta)
    else:
        # lam -> 0 removes the ridge term and Q~ becomes the full projection
        proj = projection_batch(design, fit.active_set)
    z = partial_residual_correlation(design, fit)
    return _posterior_set(Method.LQAP, design, fit, sigma2, alpha, z, proj.quadform, proj.defined)


def rl_p_intervals(design, fit: LassoFit, sigma2: float, alpha: float = 0.2, projection=None) -> IntervalSet:
    """Center ``beta~_j = x_j'Qy / x_j'Qx_j``, variance from the full projection.

    The reported ``estimate`` is the RL-P posterior mode; ``lasso_estimate``
    keeps the lasso coefficient, which these intervals need not contain.
    """
    _check(sigma2, alpha)
    proj = projection if projection is not None else projection_batch(design, fit.active_set)
    q = np.where(proj.defined, proj.quadform, 1.0)
    center = np.where(proj.defined, proj.cross_y / q, 0.0)
    return _posterior_set(Method.RLP, design, fit, sigma2, alpha, center, proj.quadform, proj.defined)


def relaxed_lasso_intervals(design, fit: LassoFit, sigma2: float, alpha: float = 0.2) -> IntervalSet:
    """Unpenalized refit on the selected features with Gaussian intervals."""
    _check(sigma2, alpha)
    p = design.p
    S = fit.active_set
    est = np.full(p, np.nan)
    lower = np.full(p, np.nan)
    upper = np.full(p, np.nan)
    defined = np.zeros(p, dtype=bool)
    if 0 < S.size < design.n:
        XS = design.Xs[:, S]
        G = XS.T @ XS
        try:
            L = np.linalg.cholesky(G)
            ok = _rcond(L, G) >= RCOND_MIN
        except np.linalg.LinAlgError:
            ok = False
        if ok:
            Ginv = np.linalg.inv(G)
            b = Ginv @ (XS.T @ design.yc)
            half = ndtri(1 - alpha / 2) * np.sqrt(sigma2 * np.diag(Ginv))
            est[S], lower[S], upper[S] = b, b - half, b + half
            defined[S] = True
    return IntervalSet(
        method=Method.RELAXED_LASSO,
        estimate=est,
        lower=lower,
        upper=upper,
        defined=defined,
        lasso_estimate=fit.beta.copy(),
        alpha=float(alpha),
        lambda_cv=fit.lam,
        sigma2_hat=float(sigma2),
        active_set=S.copy(),
        feature_names=design.feature_names,
    )


_BUILDERS = {
    Method.FULL_CONDITIONAL: full_conditional_intervals,
    Method.RLP: rl_p_intervals,
    Method.PIPEP: pipe_p_intervals,
    Method.LQAP: lqa_p_intervals,
    Method.RELAXED_LASSO: relaxed_lasso_intervals,
}


def parse_methods(methods: Iterable) -> list[Method]:
    out = []
    for m in methods:
        try:
            out.append(Method(str(m).lower().replace("-", "_")))
        except ValueError:
            valid = ", ".join(x.value for x in Method)
            raise ValueError(f"unknown method {m!r}; expected one of {valid}") from None
    return out


def compute_intervals(
    design, fit: LassoFit, sigma2: float, alpha: float = 0.2, methods: Iterable = POSTERIOR_METHODS
) -> dict[Method, IntervalSet]:
    """All requested interval sets; the full projection is shared by RL-P and PIPE-P."""
    methods = parse_methods(methods)
    out = {}
    full = None
    if Method.RLP in methods or Method.PIPEP in methods:
        full = projection_batch(design, fit.active_set)
    for m in methods:
        if m in (Method.RLP, Method.PIPEP):
            out[m] = _BUILDERS[m](design, fit, sigma2, alpha, projection=full)
        else:
            out[m] = _BUILDERS[m](design, fit, sigma2, alpha)
    return out
