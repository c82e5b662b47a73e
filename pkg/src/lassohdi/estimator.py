"""scikit-learn style front end: cross-validated lasso plus interval sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .cross_validation import CvResult, VarianceEstimate, cross_validate, fit_at_cv_lambda
from .intervals import IntervalSet, Method, compute_intervals, parse_methods
from .model_core import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    Dataset,
    LassoFit,
    StandardizedDesign,
    lambda_grid,
    standardize,
)


@dataclass
class HdiAnalysis:
    """Everything one standardize -> CV -> fit -> intervals run produces."""

    design: StandardizedDesign
    cv: CvResult
    fit: LassoFit
    variance: VarianceEstimate
    intervals: dict  # Method -> IntervalSet, standardized scale


def analyze(
    data: Dataset,
    alpha: float = 0.2,
    methods=(Method.PIPEP, Method.LQAP),
    k: int = 10,
    seed: int = 0,
    n_lambda: int = 100,
    lambda_min_ratio=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> HdiAnalysis:
    methods = parse_methods(methods)
    design = standardize(data)
    grid = lambda_grid(design, n_lambda, lambda_min_ratio)
    cv = cross_validate(design, k, grid, seed=seed, tol=tol, max_iter=max_iter)
    fit, var = fit_at_cv_lambda(design, cv, tol, max_iter)
    sets = compute_intervals(design, fit, var.sigma2_hat, alpha, methods)
    return HdiAnalysis(design, cv, fit, var, sets)


class LassoHDI(RegressorMixin, BaseEstimator):
    """Lasso at the cross-validated lambda with high-dimensional intervals.

    Parameters
    ----------
    alpha : float
        Interval level; intervals have nominal average coverage ``1 - alpha``.
        Not the penalty (the penalty is chosen by cross-validation).
    methods : sequence of str
        Any of ``full_conditional``, ``rl_p``, ``pipe_p``, ``lqa_p``,
        ``relaxed_lasso``.
    n_folds, random_state : int
        Cross-validation folds and the seed for the fold assignment.
    n_lambda, lambda_min_ratio : grid size and ``lambda_min / lambda_max``.

    Attributes
    ----------
    coef_, intercept_ : lasso fit in the units of ``X`` and ``y``.
    lambda_ : the lambda used (``lambda_cv``, moved up if that fit saturates).
    sigma2_ : residual variance estimate.
    active_set_ : indices of the nonzero coefficients.
    intervals_ : dict mapping method name to an ``IntervalSet`` in original units.
    """

    def __init__(
        self,
        alpha=0.2,
        methods=("pipe_p", "lqa_p"),
        n_folds=10,
        random_state=0,
        n_lambda=100,
        lambda_min_ratio=None,
        tol=DEFAULT_TOL,
        max_iter=DEFAULT_MAX_ITER,
    ):
        self.alpha = alpha
        self.methods = methods
        self.n_folds = n_folds
        self.random_state = random_state
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True, dtype=np.float64)
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        names = [str(c) for c in self.feature_names_in_] if hasattr(self, "feature_names_in_") else None
        res = analyze(
            Dataset(y, X, names),
            alpha=self.alpha,
            methods=self.methods,
            k=self.n_folds,
            seed=self.random_state,
            n_lambda=self.n_lambda,
            lambda_min_ratio=self.lambda_min_ratio,
            tol=self.tol,
            max_iter=self.max_iter,
        )
        self.analysis_ = res
        self.coef_, self.intercept_ = res.design.to_original_scale(res.fit.beta)
        self.lambda_ = res.fit.lam
        self.lambda_cv_ = res.cv.lambda_cv
        self.sigma2_ = res.variance.sigma2_hat
        self.active_set_ = res.fit.active_set.copy()
        self.intervals_ = {m.value: s.to_original_scale(res.design) for m, s in res.intervals.items()}
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def get_intervals(self, method="pipe_p") -> IntervalSet:
        check_is_fitted(self)
        m = parse_methods([method])[0].value
        if m not in self.intervals_:
            raise KeyError(f"method {m!r} was not requested at fit time")
        return self.intervals_[m]
