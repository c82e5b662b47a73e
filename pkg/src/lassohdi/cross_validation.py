"""K-fold cross-validation over a lambda grid and the residual variance estimate."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model_core import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    LassoFit,
    StandardizedDesign,
    fit_path,
    lambda_grid,
    lasso_path,
)


class SaturatedFitError(ValueError):
    pass


@dataclass
class CvResult:
    lambdas: np.ndarray
    cv_error: np.ndarray
    cv_se: np.ndarray
    lambda_cv: float
    fold_assignments: np.ndarray
    seed: int

    @property
    def index_cv(self) -> int:
        return int(np.flatnonzero(self.lambdas == self.lambda_cv)[0])

    def write_folds(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "fold"])
            w.writerows(enumerate(self.fold_assignments.tolist()))


@dataclass
class VarianceEstimate:
    sigma2_hat: float
    df_resid: int
    active_size: int


def assign_folds(n: int, k: int, seed: int) -> np.ndarray:
    """Balanced fold labels from a seeded permutation."""
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def cross_validate(
    design: StandardizedDesign,
    k: int = 10,
    grid: Optional[np.ndarray] = None,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CvResult:
    """Mean held-out squared error for every lambda in ``grid``.

    Folds share the global standardization of ``design``; each training
    portion is fit with its own ``1/n_train`` loss scaling. Fold paths stop
    early once saturated, and the returned grid is truncated to the lambdas
    reached by every fold. The selected lambda minimizes the CV error, ties
    going to the larger lambda.
    """
    n = design.n
    if not 2 <= k <= n:
        raise ValueError(f"number of folds must satisfy 2 <= k <= n (k={k}, n={n})")
    lambdas = lambda_grid(design) if grid is None else np.asarray(grid, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0:
        raise ValueError("grid must be a nonempty 1-d array")
    folds = assign_folds(n, k, seed)
    sq_err = np.full((n, lambdas.size), np.nan)
    n_fit = lambdas.size
    for f in range(k):
        test = folds == f
        train = ~test
        Xtr = design.Xs[train]
        if np.any(np.ptp(Xtr, axis=0) == 0):
            bad = int(np.flatnonzero(np.ptp(Xtr, axis=0) == 0)[0])
            raise ValueError(f"column {bad} is constant within training folds of fold {f}")
        betas, _, _ = lasso_path(Xtr, design.yc[train], lambdas, tol, max_iter)
        m = betas.shape[0]
        n_fit = min(n_fit, m)
        pred = design.Xs[test] @ betas.T
        sq_err[np.ix_(test, np.arange(m))] = (design.yc[test][:, None] - pred) ** 2
    # keep the lambdas every fold reached before its path stopped
    lambdas = lambdas[:n_fit]
    sq_err = sq_err[:, :n_fit]
    cv_error = sq_err.mean(axis=0)
    cv_se = sq_err.std(axis=0, ddof=1) / np.sqrt(n)
    # argmin returns the first minimum; the grid descends so that is the larger lambda
    best = int(np.argmin(cv_error))
    return CvResult(
        lambdas=lambdas,
        cv_error=cv_error,
        cv_se=cv_se,
        lambda_cv=float(lambdas[best]),
        fold_assignments=folds,
        seed=int(seed),
    )


def estimate_sigma2(design: StandardizedDesign, fit: LassoFit) -> VarianceEstimate:
    """Residual sum of squares over ``n - |S|``."""
    s = int(np.count_nonzero(fit.beta))
    df = design.n - s
    if df <= 0:
        raise SaturatedFitError("saturated fit: variance estimate undefined")
    r = design.yc - design.Xs @ fit.beta
    return VarianceEstimate(sigma2_hat=float(r @ r) / df, df_resid=df, active_size=s)


def fit_at_cv_lambda(
    design: StandardizedDesign,
    cv: CvResult,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[LassoFit, VarianceEstimate]:
    """Fit the full data at ``lambda_cv`` and estimate the error variance.

    If the fit has ``|S| >= n`` the lambda is moved up the grid to the
    smallest value whose fit leaves at least one residual degree of freedom.
    """
    idx = cv.index_cv
    path = fit_path(design, cv.lambdas[: idx + 1], tol, max_iter)
    for fit in reversed(path):
        if fit.n_active < design.n:
            return fit, estimate_sigma2(design, fit)
    raise SaturatedFitError("no lambda on the grid gives an unsaturated fit")
