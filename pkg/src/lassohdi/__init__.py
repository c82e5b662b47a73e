"""Lasso fits with average-coverage high-dimensional intervals (HDIs)."""

__version__ = "0.1.0"

from .cross_validation import CvResult, SaturatedFitError, VarianceEstimate, cross_validate, estimate_sigma2, fit_at_cv_lambda
from .estimator import LassoHDI, analyze
from .intervals import (
    IntervalRecord,
    IntervalSet,
    Method,
    compute_intervals,
    full_conditional_intervals,
    lqa_p_intervals,
    pipe_p_intervals,
    relaxed_lasso_intervals,
    rl_p_intervals,
)
from .model_core import Dataset, LassoFit, StandardizedDesign, fit_lasso, fit_path, lambda_grid, lasso_path, standardize
from .posterior import PiecewiseGaussianPosterior, build_posterior
from .projection import CollinearityError, full_projection_quadform, lqa_partial_quadform, projection_batch

__all__ = [
    "CollinearityError",
    "CvResult",
    "Dataset",
    "IntervalRecord",
    "IntervalSet",
    "LassoFit",
    "LassoHDI",
    "Method",
    "PiecewiseGaussianPosterior",
    "SaturatedFitError",
    "StandardizedDesign",
    "VarianceEstimate",
    "analyze",
    "build_posterior",
    "compute_intervals",
    "cross_validate",
    "estimate_sigma2",
    "fit_at_cv_lambda",
    "fit_lasso",
    "fit_path",
    "full_conditional_intervals",
    "full_projection_quadform",
    "lambda_grid",
    "lasso_path",
    "lqa_p_intervals",
    "lqa_partial_quadform",
    "pipe_p_intervals",
    "projection_batch",
    "relaxed_lasso_intervals",
    "rl_p_intervals",
    "standardize",
]
