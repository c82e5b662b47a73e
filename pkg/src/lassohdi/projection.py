"""Quadratic forms of full and LQA partial projections off the active set.

For feature ``j`` and the active set excluding it, ``S_j``:

    full:  x_j' Q x_j  = x_j'x_j - g' G^{-1} g,           G = X_S'X_S
    LQA:   x_j' Q~ x_j = x_j'x_j - g' (G/n + lam W^{-1})^{-1} g / n

with ``g = X_S' x_j`` and ``W = diag(|beta_k|)``. Nothing of size n x n is
ever formed; all work happens in |S|-sized Cholesky factors.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.linalg.lapack import dpocon

from .model_core import StandardizedDesign

RCOND_MIN = 1e-12
QUADFORM_REL_MIN = 1e-10


class CollinearityError(ValueError):
    pass


class ProjectionKind(enum.Enum):
    FULL = "full"
    LQA_PARTIAL = "lqa_partial"


@dataclass
class ActiveProjection:
    active_excl_j: np.ndarray
    quadform: float
    cross_y: float
    kind: ProjectionKind


@dataclass
class LqaWeights:
    w: np.ndarray
    lam: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if np.any(self.w <= 0):
            raise ValueError("LQA weights must be positive")
        if not self.lam > 0:
            raise ValueError("LQA lambda must be positive")

    @classmethod
    def from_beta(cls, beta_s, lam):
        return cls(np.abs(np.asarray(beta_s, dtype=float)), lam)


def lqa_curvature(beta_k: float) -> float:
    """Curvature ``1 / (2|beta_k|)`` of the smallest quadratic majorant of ``|b|``
    tangent at ``beta_k`` and ``-beta_k``."""
    if beta_k == 0:
        raise ValueError("curvature undefined at beta_k = 0")
    return 1.0 / (2.0 * abs(beta_k))


def lqa_majorant(b, beta_k: float):
    c = lqa_curvature(beta_k)
    d = np.asarray(b, dtype=float) - beta_k
    return abs(beta_k) + np.sign(beta_k) * d + c * d**2


def active_excluding(active_set, j: int) -> np.ndarray:
    active_set = np.asarray(active_set, dtype=np.int64)
    return active_set[active_set != j]


def _rcond(L: np.ndarray, A: np.ndarray) -> float:
    """Reciprocal 1-norm condition estimate of ``A`` from its lower Cholesky factor."""
    anorm = np.abs(A).sum(axis=0).max()
    rcond, info = dpocon(L, anorm, uplo="L")
    return float(rcond) if info == 0 else 0.0


def _factor(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, or ``CollinearityError`` if ``A`` is near singular."""
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise CollinearityError("collinear active set") from exc
    if _rcond(L, A) < RCOND_MIN:
        raise CollinearityError("collinear active set")
    return L


def _chol_delete(L: np.ndarray, i: int) -> np.ndarray:
    """Cholesky factor of ``A`` with row/column ``i`` removed.

    The trailing block absorbs the removed column by a rank-one update, which
    cannot lose positive definiteness.
    """
    k = L.shape[0]
    out = np.delete(np.delete(L, i, axis=0), i, axis=1)
    x = L[i + 1 :, i].copy()
    T = out[i:, i:]
    for m in range(k - 1 - i):
        r = np.hypot(T[m, m], x[m])
        c, s = r / T[m, m], x[m] / T[m, m]
        T[m, m] = r
        if m + 1 < T.shape[0]:
            T[m + 1 :, m] = (T[m + 1 :, m] + s * x[m + 1 :]) / c
            x[m + 1 :] = c * x[m + 1 :] - s * T[m + 1 :, m]
    return out


def _check_sj(design, s_j, j):
    s_j = np.asarray(s_j, dtype=np.int64)
    if np.any(s_j == j):
        raise ValueError("s_j must not contain j")
    if s_j.size >= design.n:
        raise CollinearityError(f"|S_j| = {s_j.size} >= n = {design.n}")
    return s_j


def _guard_quadform(q: float, n: int) -> float:
    if not q > QUADFORM_REL_MIN * n:
        raise CollinearityError("feature lies in the span of the active set")
    return q


def full_projection_quadform(design: StandardizedDesign, s_j, j: int) -> ActiveProjection:
    s_j = _check_sj(design, s_j, j)
    n = design.n
    xj = design.Xs[:, j]
    if s_j.size == 0:
        return ActiveProjection(s_j, float(xj @ xj), float(xj @ design.yc), ProjectionKind.FULL)
    XS = design.Xs[:, s_j]
    G = XS.T @ XS
    L = _factor(G)
    v = solve_triangular(L, XS.T @ xj, lower=True)
    u = solve_triangular(L, XS.T @ design.yc, lower=True)
    q = _guard_quadform(float(xj @ xj - v @ v), n)
    return ActiveProjection(s_j, q, float(xj @ design.yc - v @ u), ProjectionKind.FULL)


def lqa_partial_quadform(
    design: StandardizedDesign, s_j, j: int, weights: LqaWeights
) -> ActiveProjection:
    s_j = _check_sj(design, s_j, j)
    if weights.w.shape != s_j.shape:
        raise ValueError("weights must be defined over exactly s_j")
    n = design.n
    xj = design.Xs[:, j]
    if s_j.size == 0:
        return ActiveProjection(s_j, float(xj @ xj), np.nan, ProjectionKind.LQA_PARTIAL)
    XS = design.Xs[:, s_j]
    M = XS.T @ XS / n + np.diag(weights.lam / weights.w)
    try:
        c = cho_factor(M, lower=True)
    except LinAlgError as exc:  # SPD by construction
        raise RuntimeError("regularized LQA system is not positive definite") from exc
    g = XS.T @ xj
    q = float(xj @ xj - g @ cho_solve(c, g) / n)
    return ActiveProjection(s_j, q, np.nan, ProjectionKind.LQA_PARTIAL)


@dataclass
class ProjectionBatch:
    """Per-feature quadratic forms for every ``j`` against ``S_j``."""

    quadform: np.ndarray
    cross_y: np.ndarray
    defined: np.ndarray
    kind: ProjectionKind


def _single(design, active, j, kind, lam, beta):
    s_j = active_excluding(active, j)
    if kind is ProjectionKind.FULL:
        return full_projection_quadform(design, s_j, j)
    return lqa_partial_quadform(design, s_j, j, LqaWeights.from_beta(beta[s_j], lam))


def projection_batch(
    design: StandardizedDesign,
    active_set,
    kind: ProjectionKind = ProjectionKind.FULL,
    lam: float = None,
    beta: np.ndarray = None,
) -> ProjectionBatch:
    """Quadratic forms for all p features.

    One factorization of the |S|-sized system serves every unselected
    feature; selected features drop their own row and column from that
    factor. Degenerate features are flagged in ``defined``.
    """
    n, p = design.n, design.p
    active = np.asarray(active_set, dtype=np.int64)
    k = active.size
    X, yc = design.Xs, design.yc
    col_sq = np.einsum("ij,ij->j", X, X)
    xty = X.T @ yc
    quad = col_sq.copy()
    cross = xty.copy() if kind is ProjectionKind.FULL else np.full(p, np.nan)
    defined = np.ones(p, dtype=bool)
    if k == 0:
        return ProjectionBatch(quad, cross, defined, kind)

    XS = X[:, active]
    C = XS.T @ X  # k x p
    if kind is ProjectionKind.FULL:
        A = C[:, active]
        scale = 1.0
    else:
        if lam is None or beta is None:
            raise ValueError("LQA projection needs lam and beta")
        w = np.abs(beta[active])
        if np.any(w <= 0) or not lam > 0:
            raise ValueError("LQA weights and lambda must be positive")
        A = C[:, active] / n + np.diag(lam / w)
        scale = 1.0 / n

    try:
        L = _factor(A) if kind is ProjectionKind.FULL else np.linalg.cholesky(A)
    except (CollinearityError, np.linalg.LinAlgError):
        L = None

    if L is None:
        # full-S system unusable: unselected features are degenerate, selected
        # ones get their own (smaller) factorization
        defined[:] = False
        quad[:] = np.nan
        for j in active:
            try:
                ap = _single(design, active, j, kind, lam, beta)
            except CollinearityError:
                continue
            quad[j], defined[j] = ap.quadform, True
            if kind is ProjectionKind.FULL:
                cross[j] = ap.cross_y
        return ProjectionBatch(quad, cross, defined, kind)

    inactive = np.setdiff1d(np.arange(p), active, assume_unique=True)
    if kind is ProjectionKind.FULL:
        sty = XS.T @ yc
        u = solve_triangular(L, sty, lower=True)
    if inactive.size:
        V = solve_triangular(L, C[:, inactive], lower=True)
        quad[inactive] = col_sq[inactive] - scale * np.einsum("ij,ij->j", V, V)
        if kind is ProjectionKind.FULL:
            cross[inactive] = xty[inactive] - V.T @ u

    for pos, j in enumerate(active):
        Lj = _chol_delete(L, pos)
        keep = np.r_[0:pos, pos + 1 : k]
        if kind is ProjectionKind.FULL and Lj.size:
            if _rcond(Lj, A[np.ix_(keep, keep)]) < RCOND_MIN:
                defined[j] = False
                continue
        if np.any(np.diag(Lj) <= 1e-10 * np.sqrt(np.abs(np.diag(A)[keep]))):
            # update lost definiteness numerically; refactor directly
            try:
                ap = _single(design, active, j, kind, lam, beta)
            except CollinearityError:
                defined[j] = False
                continue
            quad[j] = ap.quadform
            if kind is ProjectionKind.FULL:
                cross[j] = ap.cross_y
            continue
        g = C[keep, j]
        v = solve_triangular(Lj, g, lower=True) if Lj.size else g[:0]
        quad[j] = col_sq[j] - scale * (v @ v)
        if kind is ProjectionKind.FULL:
            uj = solve_triangular(Lj, sty[keep], lower=True) if Lj.size else g[:0]
            cross[j] = xty[j] - v @ uj

    bad = ~(quad > QUADFORM_REL_MIN * n)
    defined &= ~bad
    return ProjectionBatch(quad, cross, defined, kind)
