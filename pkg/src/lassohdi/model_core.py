"""Data containers, standardization and the lasso coordinate-descent solver.

The solver minimizes

    Q(beta) = ||y - X beta||^2 / (2 n) + lam * ||beta||_1

by cyclic coordinate descent with an active-set strategy. All fits are done on
the standardized scale, where every column satisfies x_j' x_j = n.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000
# path stops once this fraction of the centered sum of squares is explained
DEV_RATIO_MAX = 0.999


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class Dataset:
    """Response and features in original units."""

    y: np.ndarray
    X: np.ndarray
    feature_names: Optional[list[str]] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, p = self.X.shape
        if self.y.shape[0] != n:
            raise ValueError(f"y has {self.y.shape[0]} entries but X has {n} rows")
        if n < 2 or p < 1:
            raise ValueError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("X and y must be finite")
        if self.feature_names is not None:
            self.feature_names = [str(s) for s in self.feature_names]
            if len(self.feature_names) != p:
                raise ValueError(
                    f"feature_names has {len(self.feature_names)} entries, expected {p}"
                )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class StandardizedDesign:
    """Centered response and columns scaled so that ``x_j' x_j = n``."""

    Xs: np.ndarray
    yc: np.ndarray
    col_means: np.ndarray
    col_scales: np.ndarray
    y_mean: float
    feature_names: Optional[list[str]] = None
    # row-major transpose, contiguous rows for the solver kernel
    _Xt: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._Xt is None:
            self._Xt = np.ascontiguousarray(self.Xs.T)

    @property
    def n(self) -> int:
        return self.Xs.shape[0]

    @property
    def p(self) -> int:
        return self.Xs.shape[1]

    def to_original_scale(self, beta: np.ndarray) -> tuple[np.ndarray, float]:
        """Return ``(coef, intercept)`` in the units of the raw data."""
        coef = np.asarray(beta, dtype=float) / self.col_scales
        intercept = self.y_mean - float(self.col_means @ coef)
        return coef, intercept


@dataclass
class LassoFit:
    lam: float
    beta: np.ndarray
    active_set: np.ndarray
    residuals: np.ndarray
    n_iter: int
    converged: bool

    @property
    def n_active(self) -> int:
        return len(self.active_set)


def standardize(data: Dataset) -> StandardizedDesign:
    """Center ``y`` and scale the columns of ``X`` by their population sd.

    Raises ``ValueError`` naming the first column with zero variance.
    """
    X, y = data.X, data.y
    n = X.shape[0]
    col_means = X.mean(axis=0)
    Xc = X - col_means
    col_scales = np.sqrt((Xc**2).sum(axis=0) / n)
    # relative threshold; exact zero is rare after centering roundoff
    tiny = np.finfo(float).eps * np.maximum(np.abs(col_means), 1.0) * 8
    bad = np.flatnonzero(col_scales <= tiny)
    if bad.size:
        name = f" ({data.feature_names[bad[0]]})" if data.feature_names else ""
        raise ValueError(f"column {bad[0]}{name} has zero variance")
    Xs = Xc / col_scales
    y_mean = float(y.mean())
    return StandardizedDesign(
        Xs=Xs,
        yc=y - y_mean,
        col_means=col_means,
        col_scales=col_scales,
        y_mean=y_mean,
        feature_names=data.feature_names,
    )


def soft_threshold(v, t):
    """``sign(v) * max(|v| - t, 0)``; works elementwise on arrays."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


# relative margin so the fit at lambda_max is exactly zero despite roundoff
_LMAX_MARGIN = 1e-12


def lambda_max(design: StandardizedDesign) -> float:
    """Smallest lambda whose solution is all zero."""
    return float(np.max(np.abs(design._Xt @ design.yc)) / design.n) * (1 + _LMAX_MARGIN)


def lambda_grid(
    design: StandardizedDesign, n_lambda: int = 100, min_ratio: Optional[float] = None
) -> np.ndarray:
    """Log-spaced decreasing grid from the smallest all-zero lambda."""
    if n_lambda < 2:
        raise ValueError("n_lambda must be at least 2")
    if min_ratio is None:
        min_ratio = 1e-3 if design.n < design.p else 1e-4
    if not 0 < min_ratio < 1:
        raise ValueError("min_ratio must lie in (0, 1)")
    lmax = lambda_max(design)
    if lmax <= 0:
        raise ValueError("response is identically zero after centering")
    return np.geomspace(lmax, lmax * min_ratio, n_lambda)


@njit(cache=True)
def _sweep(Xt, r, beta, v, lam, n, only_active):
    dmax = 0.0
    for j in range(Xt.shape[0]):
        bj = beta[j]
        if only_active and bj == 0.0:
            continue
        xj = Xt[j]
        s = 0.0
        for i in range(n):
            s += xj[i] * r[i]
        zj = s / n + v[j] * bj
        if zj > lam:
            new = (zj - lam) / v[j]
        elif zj < -lam:
            new = (zj + lam) / v[j]
        else:
            new = 0.0
        d = new - bj
        if d != 0.0:
            for i in range(n):
                r[i] -= d * xj[i]
            beta[j] = new
            ad = abs(d)
            if ad > dmax:
                dmax = ad
    return dmax


@njit(cache=True)
def _chol_solve(A, b):
    """Solve SPD ``A x = b`` in place of a copy; returns ``(x, ok)``."""
    k = A.shape[0]
    L = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            s = A[i, j]
            for m in range(j):
                s -= L[i, m] * L[j, m]
            if i == j:
                if s <= 1e-12 * A[i, i]:
                    return b, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    x = b.copy()
    for i in range(k):
        for m in range(i):
            x[i] -= L[i, m] * x[m]
        x[i] /= L[i, i]
    for i in range(k - 1, -1, -1):
        for m in range(i + 1, k):
            x[i] -= L[m, i] * x[m]
        x[i] /= L[i, i]
    return x, True


@njit(cache=True)
def _orthant_newton(A, cS, bS, lam):
    """Minimize the lasso objective restricted to the sign orthant of ``bS``.

    ``A`` is the active Gram block and ``cS = X_S'y/n``. Steps toward the
    orthant-wise quadratic minimizer; if a coefficient would change sign it
    stops at zero, drops it and re-solves. The objective never increases.
    Returns the new coefficients, or ``bS`` unchanged if a solve fails.
    """
    k = bS.size
    b = bS.copy()
    keep = np.ones(k, dtype=np.bool_)
    for _ in range(k):
        S = np.flatnonzero(keep)
        m = S.size
        if m == 0:
            return b
        sub = np.empty((m, m))
        rhs = np.empty(m)
        for a in range(m):
            rhs[a] = cS[S[a]] - lam * np.sign(b[S[a]])
            for q in range(m):
                sub[a, q] = A[S[a], S[q]]
        x, ok = _chol_solve(sub, rhs)
        if not ok:
            return bS.copy()
        t = 1.0
        hit = -1
        for a in range(m):
            cur = b[S[a]]
            if np.sign(x[a]) != np.sign(cur):
                ta = cur / (cur - x[a])
                if ta < t:
                    t = ta
                    hit = a
        for a in range(m):
            b[S[a]] += t * (x[a] - b[S[a]])
        if hit < 0:
            return b
        b[S[hit]] = 0.0
        keep[S[hit]] = False
    return b


@njit(cache=True)
def _active_newton(Xt, r, beta, lam, n):
    """Exact active-set step for the residual-update kernel."""
    S = np.flatnonzero(beta)
    k = S.size
    if k == 0 or k >= n:
        return
    XS = np.empty((k, n))
    for a in range(k):
        XS[a] = Xt[S[a]]
    A = XS @ XS.T / n
    cS = XS @ r / n + A @ beta[S]
    b = _orthant_newton(A, cS, beta[S], lam)
    r -= XS.T @ (b - beta[S])
    for a in range(k):
        beta[S[a]] = b[a]


# inner sweeps before an exact active-set solve, and between retries; on an
# ill-conditioned active set the solve is only accurate to ~cond*eps, so
# repeating it often would keep perturbing coefficients above tol
_NEWTON_AFTER = 4
_NEWTON_RETRY = 256
# above this many columns the p x p Gram matrix is not formed
GRAM_MAX_P = 1500


@njit(cache=True)
def _cd_solve(Xt, r, beta, v, lam, tol, max_iter, newton):
    """Residual-update coordinate descent at one lambda.

    Full sweep, iterate on the active set, confirm with a full sweep. When
    the inner sweeps stall, as they do on ill-conditioned active sets, an
    exact active-set solve is tried (``newton``).
    """
    n = Xt.shape[1]
    it = 0
    while it < max_iter:
        dmax = _sweep(Xt, r, beta, v, lam, n, False)
        it += 1
        if dmax < tol:
            return it, True
        inner = 0
        while it < max_iter:
            dmax = _sweep(Xt, r, beta, v, lam, n, True)
            it += 1
            inner += 1
            if dmax < tol:
                break
            if newton and (inner == _NEWTON_AFTER or inner % _NEWTON_RETRY == 0):
                _active_newton(Xt, r, beta, lam, n)
    return it, False


@njit(cache=True)
def _gram_sweep(G, grad, beta, lam, idx, m, full):
    """One pass over ``idx[:m]``; ``grad = c - G beta`` is kept exact on all
    coordinates when ``full`` and on ``idx[:m]`` otherwise."""
    p = G.shape[0]
    dmax = 0.0
    for a in range(m):
        j = idx[a]
        gjj = G[j, j]
        bj = beta[j]
        zj = grad[j] + gjj * bj
        if zj > lam:
            new = (zj - lam) / gjj
        elif zj < -lam:
            new = (zj + lam) / gjj
        else:
            new = 0.0
        d = new - bj
        if d != 0.0:
            beta[j] = new
            if full:
                for i in range(p):
                    grad[i] -= d * G[i, j]
            else:
                for b in range(m):
                    grad[idx[b]] -= d * G[idx[b], j]
            ad = abs(d)
            if ad > dmax:
                dmax = ad
    return dmax


@njit(cache=True)
def _gram_refresh(G, c, grad, beta):
    p = G.shape[0]
    for i in range(p):
        s = c[i]
        for j in range(p):
            if beta[j] != 0.0:
                s -= G[i, j] * beta[j]
        grad[i] = s


@njit(cache=True)
def _gram_newton(G, c, grad, beta, lam, idx, m, n):
    """Exact orthant step on the active coordinates in ``idx[:m]``.

    With at least ``n`` nonzeros the active Gram block is singular, so the
    step is taken over the ``n - 1`` largest coefficients with the others
    held fixed (still an exact block minimization, so still a descent step).
    """
    S = np.empty(m, dtype=np.int64)
    k = 0
    for a in range(m):
        if beta[idx[a]] != 0.0:
            S[k] = idx[a]
            k += 1
    if k == 0 or n < 2:
        return
    S = S[:k]
    if k >= n:
        order = np.argsort(-np.abs(beta[S]))
        T = S[order[: n - 1]]
        F = S[order[n - 1 :]]
    else:
        T = S
        F = S[:0]
    t = T.size
    A = np.empty((t, t))
    cT = np.empty(t)
    for a in range(t):
        s = c[T[a]]
        for q in range(F.size):
            s -= G[T[a], F[q]] * beta[F[q]]
        cT[a] = s
        for q in range(t):
            A[a, q] = G[T[a], T[q]]
    b = _orthant_newton(A, cT, beta[T], lam)
    for a in range(t):
        beta[T[a]] = b[a]
    for a in range(m):
        s = c[idx[a]]
        for q in range(k):
            s -= G[idx[a], S[q]] * beta[S[q]]
        grad[idx[a]] = s


@njit(cache=True)
def _gram_solve(G, c, grad, beta, lam, tol, max_iter, n):
    """Covariance-update coordinate descent at one lambda (same sweep plan
    as ``_cd_solve``); ``grad`` must equal ``c - G beta`` on entry."""
    p = G.shape[0]
    every = np.arange(p)
    idx = np.empty(p, dtype=np.int64)
    it = 0
    while it < max_iter:
        dmax = _gram_sweep(G, grad, beta, lam, every, p, True)
        it += 1
        if dmax < tol:
            return it, True
        m = 0
        for j in range(p):
            if beta[j] != 0.0:
                idx[m] = j
                m += 1
        inner = 0
        while it < max_iter:
            dmax = _gram_sweep(G, grad, beta, lam, idx, m, False)
            it += 1
            inner += 1
            if dmax < tol:
                break
            if inner == _NEWTON_AFTER or inner % _NEWTON_RETRY == 0:
                _gram_newton(G, c, grad, beta, lam, idx, m, n)
        # inactive gradients went stale during the inner sweeps
        _gram_refresh(G, c, grad, beta)
    return it, False


@njit(cache=True)
def _path_done(r_ss, tss, beta, dev_max, df_max):
    nnz = 0
    for j in range(beta.shape[0]):
        if beta[j] != 0.0:
            nnz += 1
    return nnz >= df_max or (tss > 0.0 and 1.0 - r_ss / tss >= dev_max)


@njit(cache=True)
def _cd_path(Xt, y, v, lambdas, tol, max_iter, dev_max, df_max):
    p, n = Xt.shape
    L = lambdas.shape[0]
    betas = np.zeros((L, p))
    iters = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    beta = np.zeros(p)
    r = y.copy()
    tss = y @ y
    n_fit = L
    for k in range(L):
        it, ok = _cd_solve(Xt, r, beta, v, lambdas[k], tol, max_iter, True)
        betas[k] = beta
        iters[k] = it
        conv[k] = ok
        if _path_done(r @ r, tss, beta, dev_max, df_max):
            n_fit = k + 1
            break
    return betas[:n_fit], iters[:n_fit], conv[:n_fit]


@njit(cache=True)
def _gram_path(Xt, y, lambdas, tol, max_iter, dev_max, df_max):
    p, n = Xt.shape
    L = lambdas.shape[0]
    G = Xt @ Xt.T / n
    c = Xt @ y / n
    yy = y @ y / n
    betas = np.zeros((L, p))
    iters = np.zeros(L, dtype=np.int64)
    conv = np.zeros(L, dtype=np.bool_)
    beta = np.zeros(p)
    grad = c.copy()
    n_fit = L
    for k in range(L):
        it, ok = _gram_solve(G, c, grad, beta, lambdas[k], tol, max_iter, n)
        betas[k] = beta
        iters[k] = it
        conv[k] = ok
        # ||y - X b||^2 / n = y'y/n - 2 c'b + b'Gb = y'y/n - c'b - grad'b
        r_ss = (yy - c @ beta - grad @ beta) * n
        if _path_done(r_ss, yy * n, beta, dev_max, df_max):
            n_fit = k + 1
            break
    return betas[:n_fit], iters[:n_fit], conv[:n_fit]


def lasso_path(
    X: np.ndarray,
    y: np.ndarray,
    lambdas: Sequence[float],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    early_stop: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Warm-started coordinate descent over ``lambdas`` for an arbitrary design.

    Columns need not be standardized, which lets cross-validation fit on
    training rows of a globally standardized design. Returns
    ``(betas, n_iter, converged)`` with one row of ``betas`` per fitted lambda.

    With ``early_stop`` the path ends once the fit saturates (``|S| >= n``)
    or explains ``DEV_RATIO_MAX`` of the variance; the returned arrays are
    then shorter than ``lambdas``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    Xt = np.ascontiguousarray(X.T)
    v = np.einsum("ji,ji->j", Xt, Xt) / n
    if np.any(v <= 0):
        bad = int(np.flatnonzero(v <= 0)[0])
        raise ValueError(f"column {bad} is identically zero on the fitting rows")
    lambdas = np.ascontiguousarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise ValueError("lambda must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    dev_max, df_max = (DEV_RATIO_MAX, n) if early_stop else (np.inf, X.shape[1] + 1)
    y = np.asarray(y, dtype=float).copy()
    if X.shape[1] <= GRAM_MAX_P:
        return _gram_path(Xt, y, lambdas, tol, int(max_iter), dev_max, df_max)
    return _cd_path(Xt, y, v, lambdas, tol, int(max_iter), dev_max, df_max)


def _make_fit(design, lam, beta, n_iter, converged) -> LassoFit:
    beta = np.asarray(beta, dtype=float).copy()
    if not converged:
        warnings.warn(
            f"coordinate descent did not converge at lambda={lam:.6g} "
            f"after {n_iter} sweeps",
            ConvergenceWarning,
            stacklevel=3,
        )
    return LassoFit(
        lam=float(lam),
        beta=beta,
        active_set=np.flatnonzero(beta),
        residuals=design.yc - design.Xs @ beta,
        n_iter=int(n_iter),
        converged=bool(converged),
    )


def fit_lasso(
    design: StandardizedDesign,
    lam: float,
    warm_start: Optional[np.ndarray] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> LassoFit:
    """Minimize the lasso objective at a single ``lam``.

    A fit that hits ``max_iter`` is returned with ``converged=False`` and a
    ``ConvergenceWarning``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = np.zeros(design.p) if warm_start is None else np.array(warm_start, dtype=float)
    r = design.yc - design.Xs @ beta
    v = np.ones(design.p)
    n_iter, ok = _cd_solve(design._Xt, r, beta, v, float(lam), tol, int(max_iter), True)
    return _make_fit(design, lam, beta, n_iter, ok)


def fit_path(
    design: StandardizedDesign,
    lambdas: Sequence[float],
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> list[LassoFit]:
    lambdas = np.asarray(lambdas, dtype=float)
    betas, iters, conv = lasso_path(design.Xs, design.yc, lambdas, tol, max_iter, early_stop=False)
    return [_make_fit(design, lam, b, it, ok) for lam, b, it, ok in zip(lambdas, betas, iters, conv)]


def objective(design: StandardizedDesign, beta: np.ndarray, lam: float) -> float:
    r = design.yc - design.Xs @ beta
    return float(r @ r / (2 * design.n) + lam * np.abs(beta).sum())


def partial_residual_correlation(design: StandardizedDesign, fit: LassoFit, j=None):
    """``z_j = x_j' (y - X_{-j} beta_{-j}) / n``.

    Uses ``x_j' r / n + beta_j``, valid because ``x_j' x_j = n``. With ``j=None``
    the whole vector is returned.
    """
    z = design._Xt @ fit.residuals / design.n + fit.beta
    return z if j is None else float(z[j])


def kkt_violation(design: StandardizedDesign, fit: LassoFit) -> np.ndarray:
    """Per-feature deviation from the lasso optimality conditions."""
    g = design._Xt @ fit.residuals / design.n
    active = fit.beta != 0
    out = np.maximum(np.abs(g) - fit.lam, 0.0)
    out[active] = np.abs(g[active] - fit.lam * np.sign(fit.beta[active]))
    return out
