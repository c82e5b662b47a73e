import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lassohdi.model_core import (
    ConvergenceWarning,
    Dataset,
    fit_lasso,
    fit_path,
    kkt_violation,
    lambda_grid,
    lambda_max,
    lasso_path,
    objective,
    partial_residual_correlation,
    soft_threshold,
    standardize,
)
from oracles import naive_cd, ols


def make_design(n, p, seed, corr=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    if corr:
        X[:, 1:] = corr * X[:, :1] + np.sqrt(1 - corr**2) * X[:, 1:]
    beta = np.zeros(p)
    beta[: min(p, 4)] = [1.5, -1.0, 0.7, 0.3][: min(p, 4)]
    y = X @ beta + rng.normal(size=n)
    return standardize(Dataset(y, X))


def orthonormal_design(n, p, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, p))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    X = Q * np.sqrt(n)
    y = X @ rng.normal(size=p) + rng.normal(size=n)
    return standardize(Dataset(y, X))


def kkt_certificate(design, fit, tol=1e-8):
    """Inactive: |z_j| <= lam + tol. Active: x_j'r/n = lam sign(beta_j) up to tol (1 + |z_j|)."""
    z = partial_residual_correlation(design, fit)
    g = z - fit.beta
    on = fit.beta != 0
    ok_off = np.abs(z[~on]) <= fit.lam + tol
    ok_on = np.abs(g[on] - fit.lam * np.sign(fit.beta[on])) <= tol * (1 + np.abs(z[on]))
    return bool(ok_off.all() and ok_on.all())


class TestStandardize:
    def test_column_example(self):
        d = standardize(Dataset([4.0, 6.0, 8.0], [[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(d.Xs[:, 0], [-np.sqrt(1.5), 0.0, np.sqrt(1.5)], rtol=1e-15)
        np.testing.assert_allclose(d.yc, [-2.0, 0.0, 2.0])
        assert d.y_mean == 6.0

    def test_invariants(self):
        rng = np.random.default_rng(3)
        X = rng.normal(5, 3, size=(40, 7))
        d = standardize(Dataset(rng.normal(size=40), X))
        np.testing.assert_allclose(d.Xs.sum(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose((d.Xs**2).sum(axis=0), 40, rtol=1e-10)
        assert abs(d.yc.mean()) < 1e-12
        np.testing.assert_allclose(d.Xs, (X - d.col_means) / d.col_scales)

    def test_constant_column_named(self):
        X = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
        with pytest.raises(ValueError, match="column 1"):
            standardize(Dataset(np.arange(5.0), X))

    @pytest.mark.parametrize(
        "y, X, msg",
        [
            ([1.0], [[1.0]], "n >= 2"),
            ([1.0, 2.0], [[1.0], [np.nan]], "finite"),
            ([1.0, 2.0, 3.0], [[1.0], [2.0]], "entries"),
        ],
    )
    def test_dataset_validation(self, y, X, msg):
        with pytest.raises(ValueError, match=msg):
            Dataset(y, X)

    def test_feature_names_length(self):
        with pytest.raises(ValueError, match="feature_names"):
            Dataset([1.0, 2.0], [[1.0, 2.0], [3.0, 5.0]], feature_names=["a"])

    def test_back_transform(self):
        d = make_design(30, 4, 0)
        fit = fit_lasso(d, 0.05)
        coef, b0 = d.to_original_scale(fit.beta)
        X = d.Xs * d.col_scales + d.col_means
        np.testing.assert_allclose(X @ coef + b0, d.Xs @ fit.beta + d.y_mean, atol=1e-10)


@pytest.mark.parametrize("v, t, out", [(3, 1, 2), (-0.5, 1, 0), (-3, 1, -2)])
def test_soft_threshold_examples(v, t, out):
    assert soft_threshold(v, t) == out


def test_soft_threshold_rejects_negative():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


class TestLambdaGrid:
    def test_single_feature_example(self):
        x = np.array([1.0, -1.0, 1.0, -1.0])
        d = standardize(Dataset(0.7 * x, x[:, None]))
        np.testing.assert_allclose(lambda_grid(d, 2, 0.1), [0.7, 0.07], rtol=1e-11)

    def test_lambda_max_zero_fit(self):
        d = make_design(30, 10, 1)
        fit = fit_lasso(d, lambda_max(d))
        assert fit.active_set.size == 0

    def test_log_spaced(self):
        g = lambda_grid(make_design(30, 10, 2), 50, 1e-3)
        ratios = g[1:] / g[:-1]
        assert np.all(np.diff(g) < 0)
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_default_min_ratio(self):
        wide = lambda_grid(make_design(20, 40, 0))
        tall = lambda_grid(make_design(40, 5, 0))
        assert wide[-1] / wide[0] == pytest.approx(1e-3)
        assert tall[-1] / tall[0] == pytest.approx(1e-4)

    def test_zero_response(self):
        d = standardize(Dataset(np.ones(5), np.arange(5.0)[:, None]))
        with pytest.raises(ValueError, match="zero"):
            lambda_grid(d)

    @pytest.mark.parametrize("n_lambda, ratio", [(1, 0.1), (10, 0.0), (10, 1.0)])
    def test_bad_arguments(self, n_lambda, ratio):
        with pytest.raises(ValueError):
            lambda_grid(make_design(10, 3, 0), n_lambda, ratio)


class TestFitLasso:
    def test_orthonormal_closed_form(self):
        d = orthonormal_design(40, 6, 0)
        for lam in (0.01, 0.1, 0.5):
            fit = fit_lasso(d, lam)
            expect = soft_threshold(d.Xs.T @ d.yc / d.n, lam)
            np.testing.assert_allclose(fit.beta, expect, atol=1e-12)

    def test_ols_at_zero(self):
        d = make_design(60, 8, 4, corr=0.5)
        fit = fit_lasso(d, 0.0)
        np.testing.assert_allclose(fit.beta, ols(d.Xs, d.yc), atol=1e-6)

    def test_local_grid_optimality(self):
        d = make_design(5, 3, 5)
        lam = 0.1
        fit = fit_lasso(d, lam)
        q0 = objective(d, fit.beta, lam)
        steps = np.array(list(itertools.product((-0.01, 0.0, 0.01), repeat=3)))
        for s in steps:
            assert q0 <= objective(d, fit.beta + s, lam) + 1e-14

    def test_matches_naive_cd(self):
        d = make_design(25, 12, 6, corr=0.6)
        for lam in (0.02, 0.2):
            np.testing.assert_allclose(fit_lasso(d, lam).beta, naive_cd(d.Xs, d.yc, lam), atol=1e-8)

    def test_active_set_matches_nonzeros(self):
        fit = fit_lasso(make_design(30, 20, 7), 0.1)
        np.testing.assert_array_equal(fit.active_set, np.flatnonzero(fit.beta))
        assert fit.n_active == fit.active_set.size

    def test_residuals(self):
        d = make_design(30, 20, 7)
        fit = fit_lasso(d, 0.1)
        np.testing.assert_allclose(fit.residuals, d.yc - d.Xs @ fit.beta, atol=1e-12)

    def test_nonconvergence_flagged(self):
        d = make_design(30, 20, 8, corr=0.9)
        with pytest.warns(ConvergenceWarning):
            fit = fit_lasso(d, 0.001, max_iter=1)
        assert not fit.converged

    def test_objective_monotone_in_sweeps(self):
        d = make_design(40, 30, 9, corr=0.7)
        lam = 0.02
        vals = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            for k in range(1, 15):
                vals.append(objective(d, fit_lasso(d, lam, max_iter=k).beta, lam))
        assert np.all(np.diff(vals) <= 1e-13)

    def test_warm_start_agrees_with_cold(self):
        d = make_design(50, 40, 10, corr=0.5)
        grid = lambda_grid(d, 30)
        for fit in fit_path(d, grid)[::5]:
            cold = fit_lasso(d, fit.lam)
            np.testing.assert_allclose(fit.beta, cold.beta, atol=1e-8)

    def test_invalid(self):
        d = make_design(10, 3, 0)
        with pytest.raises(ValueError):
            fit_lasso(d, -1.0)
        with pytest.raises(ValueError):
            fit_lasso(d, 0.1, tol=0.0)

    def test_affine_invariance(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(40, 6))
        y = X[:, 0] - X[:, 2] + rng.normal(size=40)
        a = standardize(Dataset(y, X))
        b = standardize(Dataset(y, X * rng.uniform(0.1, 10, 6) + rng.normal(0, 5, 6)))
        fa, fb = fit_lasso(a, 0.1), fit_lasso(b, 0.1)
        np.testing.assert_array_equal(fa.active_set, fb.active_set)
        np.testing.assert_allclose(fa.beta, fb.beta, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(5, 40),
        p=st.integers(1, 60),
        seed=st.integers(0, 2**31),
        frac=st.floats(0.01, 1.0),
    )
    def test_kkt_property(self, n, p, seed, frac):
        d = make_design(n, p, seed, corr=0.3 if p > 1 else 0.0)
        fit = fit_lasso(d, frac * lambda_max(d))
        assert fit.converged
        assert kkt_certificate(d, fit)
        assert kkt_violation(d, fit).max() <= 1e-8


class TestPath:
    def test_fit_path_full_length(self):
        d = make_design(20, 50, 12)
        grid = lambda_grid(d, 40)
        assert len(fit_path(d, grid)) == 40

    def test_early_stop_truncates(self):
        d = make_design(20, 50, 12)
        betas, iters, conv = lasso_path(d.Xs, d.yc, lambda_grid(d, 100, 1e-4))
        assert betas.shape[0] < 100
        assert conv.all()

    def test_unstandardized_columns(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(30, 8)) * rng.uniform(0.5, 2, 8)
        y = X[:, 0] + rng.normal(size=30)
        betas, _, _ = lasso_path(X, y, [0.3, 0.05], early_stop=False)
        np.testing.assert_allclose(betas[1], naive_cd(X, y, 0.05), atol=1e-8)

    def test_zero_column_rejected(self):
        X = np.zeros((5, 2))
        X[:, 0] = np.arange(5.0)
        with pytest.raises(ValueError, match="column 1"):
            lasso_path(X, np.arange(5.0), [0.1])


class TestPartialResidualCorrelation:
    def test_direct_recomputation(self):
        d = make_design(6, 4, 14)
        fit = fit_lasso(d, 0.05)
        for j in range(4):
            keep = np.arange(4) != j
            r_j = d.yc - d.Xs[:, keep] @ fit.beta[keep]
            assert partial_residual_correlation(d, fit, j) == pytest.approx(d.Xs[:, j] @ r_j / d.n, abs=1e-12)

    def test_zero_coefficient(self):
        d = make_design(30, 10, 15)
        fit = fit_lasso(d, 0.2)
        j = int(np.flatnonzero(fit.beta == 0)[0])
        assert partial_residual_correlation(d, fit, j) == pytest.approx(d.Xs[:, j] @ fit.residuals / d.n, abs=1e-15)

    def test_soft_threshold_recovers_beta(self):
        d = make_design(30, 10, 16)
        fit = fit_lasso(d, 0.05)
        z = partial_residual_correlation(d, fit)
        np.testing.assert_allclose(soft_threshold(z, fit.lam), fit.beta, atol=1e-9)
