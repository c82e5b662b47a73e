import csv
import io
import json

import numpy as np
import pytest
from scipy.stats import norm

from lassohdi.intervals import (
    CSV_COLUMNS,
    Method,
    compute_intervals,
    full_conditional_intervals,
    lqa_p_intervals,
    parse_methods,
    pipe_p_intervals,
    relaxed_lasso_intervals,
    rl_p_intervals,
)
from lassohdi.model_core import Dataset, LassoFit, fit_lasso, lambda_max, standardize
from lassohdi.posterior import build_posterior
from lassohdi.projection import active_excluding
from oracles import dense_full_quadform, dense_lqa_quadform, ols_intervals, posterior_quantile


def design(n, p, seed, corr=0.0, names=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    if corr:
        X[:, 1:] = corr * X[:, :1] + np.sqrt(1 - corr**2) * X[:, 1:]
    y = X[:, :3] @ np.array([1.0, -0.8, 0.5]) + rng.normal(size=n)
    return standardize(Dataset(y, X, feature_names=names))


def orthonormal(n, p, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, p))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    X = Q * np.sqrt(n)
    return standardize(Dataset(X @ np.array([0.9, -0.6, 0.3] + [0.0] * (p - 3)) + rng.normal(size=n), X))


def scripted_pipeline(d, fit, sigma2, alpha):
    """From scratch: dense n x n projections and quadrature quantiles."""
    n, p = d.Xs.shape
    out = {m: np.full((p, 2), np.nan) for m in ("pipe", "lqa", "rl", "fc")}
    for j in range(p):
        keep = np.arange(p) != j
        zj = d.Xs[:, j] @ (d.yc - d.Xs[:, keep] @ fit.beta[keep]) / n
        s_j = active_excluding(fit.active_set, j)
        qf, cy = dense_full_quadform(d.Xs, d.yc, s_j, j)
        ql = dense_lqa_quadform(d.Xs, s_j, j, fit.beta, fit.lam)
        for key, center, a in (("pipe", zj, qf), ("lqa", zj, ql), ("rl", cy / qf, qf), ("fc", zj, n)):
            tau = np.sqrt(sigma2 / a)
            out[key][j] = [posterior_quantile(q, center, fit.lam, tau) for q in (alpha / 2, 1 - alpha / 2)]
    return out


def test_end_to_end_dense_oracle():
    d = design(20, 8, 0, corr=0.4)
    fit = fit_lasso(d, 0.15)
    assert 1 <= fit.n_active < 8
    sigma2 = 0.9
    expect = scripted_pipeline(d, fit, sigma2, 0.2)
    got = compute_intervals(d, fit, sigma2, 0.2, [Method.PIPEP, Method.LQAP, Method.RLP, Method.FULL_CONDITIONAL])
    for key, m in (("pipe", Method.PIPEP), ("lqa", Method.LQAP), ("rl", Method.RLP), ("fc", Method.FULL_CONDITIONAL)):
        s = got[m]
        assert s.defined.all()
        np.testing.assert_allclose(s.lower, expect[key][:, 0], atol=1e-6)
        np.testing.assert_allclose(s.upper, expect[key][:, 1], atol=1e-6)


def test_orthonormal_collapse():
    d = orthonormal(40, 6, 1)
    fit = fit_lasso(d, 0.2)
    assert fit.n_active >= 2
    sets = compute_intervals(d, fit, 1.0, 0.2, ["full_conditional", "rl_p", "pipe_p", "lqa_p"])
    fc = sets[Method.FULL_CONDITIONAL]
    for m in (Method.RLP, Method.PIPEP):
        np.testing.assert_allclose(sets[m].lower, fc.lower, atol=1e-9)
        np.testing.assert_allclose(sets[m].upper, fc.upper, atol=1e-9)
    # every S_j is orthogonal to x_j, so the LQA projection also leaves x_j alone
    np.testing.assert_allclose(sets[Method.LQAP].lower, fc.lower, atol=1e-9)


def test_null_fit_all_methods_agree():
    d = design(30, 10, 2)
    fit = fit_lasso(d, lambda_max(d) * 1.01)
    assert fit.n_active == 0
    sets = compute_intervals(d, fit, 1.0, 0.2, ["full_conditional", "pipe_p", "lqa_p"])
    fc = sets[Method.FULL_CONDITIONAL]
    for m in (Method.PIPEP, Method.LQAP):
        # x_j'x_j equals n up to rounding
        np.testing.assert_allclose(sets[m].lower, fc.lower, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(sets[m].upper, fc.upper, rtol=1e-12, atol=1e-15)


def test_full_conditional_width_depends_on_abs_z():
    d = orthonormal(30, 4, 3)
    d.yc[:] = d.Xs[:, 0] * 0.5 - d.Xs[:, 1] * 0.5
    fit = LassoFit(0.1, np.zeros(4), np.empty(0, dtype=np.int64), d.yc.copy(), 0, True)
    s = full_conditional_intervals(d, fit, 1.0)
    assert s.width[0] == pytest.approx(s.width[1], rel=1e-12)


def test_alpha_nesting_and_lqa_narrower():
    for seed in range(10):
        d = design(40, 60, seed, corr=0.5)
        fit = fit_lasso(d, 0.15 * lambda_max(d))
        wide = compute_intervals(d, fit, 1.0, 0.05)
        narrow = compute_intervals(d, fit, 1.0, 0.2)
        for m in narrow:
            ok = narrow[m].defined
            assert np.all(wide[m].lower[ok] <= narrow[m].lower[ok] + 1e-12)
            assert np.all(narrow[m].upper[ok] <= wide[m].upper[ok] + 1e-12)
        pipe, lqa = narrow[Method.PIPEP], narrow[Method.LQAP]
        both = pipe.defined & lqa.defined
        assert np.all(lqa.width[both] <= pipe.width[both] * (1 + 1e-9))


def test_mode_containment_on_fitted_designs():
    for seed in range(10):
        d = design(50, 80, seed, corr=0.3)
        fit = fit_lasso(d, 0.2 * lambda_max(d))
        for m in (Method.PIPEP, Method.LQAP, Method.FULL_CONDITIONAL):
            s = compute_intervals(d, fit, 1.0, 0.2, [m])[m]
            ok = s.defined
            assert np.all(s.lower[ok] <= fit.beta[ok] + 1e-9)
            assert np.all(fit.beta[ok] <= s.upper[ok] + 1e-9)


def test_zero_fit_contains_zero_iff_tails_allow():
    # the mode is 0 for every feature; 0 is inside exactly when alpha/2 <= F(0) <= 1 - alpha/2
    d = design(30, 5, 4)
    fit = fit_lasso(d, lambda_max(d))
    s = pipe_p_intervals(d, fit, 1.0)
    z = d.Xs.T @ d.yc / 30
    inside = (s.lower <= 0) & (0 <= s.upper)
    F0 = np.array([build_posterior(zj, fit.lam, 30.0, 1.0).cdf(0.0) for zj in z])
    np.testing.assert_array_equal(inside, (F0 >= 0.1) & (F0 <= 0.9))
    # features well inside the threshold always contain 0
    assert inside[np.abs(z) < 0.5 * fit.lam].all()
    # the feature attaining lambda_max sits on the boundary, where 0 can fall outside
    top = int(np.argmax(np.abs(z)))
    assert not inside[top]


def test_rl_p_estimate_is_posterior_mode():
    d = design(30, 10, 5, corr=0.5)
    fit = fit_lasso(d, 0.1)
    s = rl_p_intervals(d, fit, 1.0)
    np.testing.assert_array_equal(s.lasso_estimate, fit.beta)
    assert np.all((s.lower <= s.estimate) & (s.estimate <= s.upper))


def test_relaxed_lasso_ols_oracle():
    d = design(30, 5, 6)
    fit = fit_lasso(d, 1e-3)
    assert fit.n_active == 5
    s = relaxed_lasso_intervals(d, fit, 1.3, 0.2)
    b, lo, hi = ols_intervals(d.Xs, d.yc, 1.3, 0.2)
    np.testing.assert_allclose(s.estimate, b, atol=1e-10)
    np.testing.assert_allclose(s.lower, lo, atol=1e-10)
    np.testing.assert_allclose(s.upper, hi, atol=1e-10)


def test_relaxed_lasso_single_orthonormal_feature():
    d = orthonormal(40, 5, 7)
    fit = fit_lasso(d, 0.7)
    assert fit.n_active == 1
    j = int(fit.active_set[0])
    s = relaxed_lasso_intervals(d, fit, 1.0, 0.2)
    assert s.estimate[j] == pytest.approx(d.Xs[:, j] @ d.yc / 40, abs=1e-12)
    assert s.lower[j] == pytest.approx(s.estimate[j] - norm.ppf(0.9) * np.sqrt(1 / 40), abs=1e-12)
    assert s.defined.sum() == 1 and np.isnan(s.lower[np.arange(5) != j]).all()


def test_relaxed_lasso_at_zero_matches_lasso():
    d = design(40, 6, 8)
    fit = fit_lasso(d, 0.0)
    s = relaxed_lasso_intervals(d, fit, 1.0)
    np.testing.assert_allclose(s.estimate, fit.beta, atol=1e-6)


def test_relaxed_lasso_singular_refit():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(20, 4))
    X[:, 3] = X[:, 0]
    d = standardize(Dataset(rng.normal(size=20), X))
    beta = np.array([0.3, 0.0, 0.0, 0.2])
    fit = LassoFit(0.05, beta, np.array([0, 3]), d.yc - d.Xs @ beta, 1, True)
    assert not relaxed_lasso_intervals(d, fit, 1.0).defined.any()


def test_duplicate_column_undefined_records():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(30, 6))
    X[:, 4] = X[:, 1]
    d = standardize(Dataset(X[:, 1] * 2 + rng.normal(size=30), X))
    beta = np.zeros(6)
    beta[[1, 4]] = 0.8
    fit = LassoFit(0.1, beta, np.array([1, 4]), d.yc - d.Xs @ beta, 1, True)
    s = pipe_p_intervals(d, fit, 1.0)
    assert not s.defined.any()
    assert np.all(np.isinf(s.width))
    assert not s.contains(np.zeros(6)).any()


def test_invalid_arguments():
    d = design(20, 4, 11)
    fit = fit_lasso(d, 0.1)
    with pytest.raises(ValueError):
        pipe_p_intervals(d, fit, 0.0)
    with pytest.raises(ValueError):
        lqa_p_intervals(d, fit, 1.0, alpha=1.0)
    with pytest.raises(ValueError, match="unknown method"):
        parse_methods(["bogus"])
    assert parse_methods(["PIPE-P", "rl_p"]) == [Method.PIPEP, Method.RLP]


def test_csv_and_json():
    d = design(20, 4, 12, names=["a", "b", "c", "d"])
    fit = fit_lasso(d, 0.1)
    s = pipe_p_intervals(d, fit, 1.0)
    text = s.to_csv()
    assert text.endswith("\r\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 5 and rows[1][1] == "a" and rows[1][5] == "pipe_p"
    assert float(rows[2][3]) == s.lower[1]  # 17 significant digits round-trip
    obj = json.loads(s.to_json())
    assert obj["method"] == "pipe_p" and len(obj["records"]) == 4


def test_json_has_no_nan():
    d = design(20, 4, 13)
    fit = fit_lasso(d, 0.3)
    text = relaxed_lasso_intervals(d, fit, 1.0).to_json()
    assert "NaN" not in text
    assert any(r["lower"] is None for r in json.loads(text)["records"])


def test_original_scale():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(40, 3)) * np.array([10.0, 0.1, 1.0])
    d = standardize(Dataset(X[:, 0] * 0.1 + rng.normal(size=40), X))
    fit = fit_lasso(d, 0.05)
    s = pipe_p_intervals(d, fit, 1.0)
    o = s.to_original_scale(d)
    np.testing.assert_allclose(o.lower * d.col_scales, s.lower)
    np.testing.assert_allclose(o.estimate, d.to_original_scale(fit.beta)[0])
