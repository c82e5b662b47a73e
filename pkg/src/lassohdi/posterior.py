"""Two-branch piecewise Gaussian posterior for a single lasso coefficient.

The unnormalized density is

    C_- exp(-(b - (z + lam))^2 / (2 tau2))   for b < 0
    C_+ exp(-(b - (z - lam))^2 / (2 tau2))   for b >= 0

with ``tau2 = sigma2 / a`` and ``log C_-= -log C_+ = z lam / tau2``. It is
continuous at zero and its mode is ``soft_threshold(z, lam)``. Every weight
and mass is kept on the log scale because ``C_+-`` overflow for routine inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtri, ndtri_exp


class DegenerateProjectionError(ValueError):
    pass


_SQRT2 = np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_NEWTON_STEPS = 4


def _log_erfcx_neg(c):
    """``log erfcx(-c / sqrt2) = log(2 Phi(c)) + c^2 / 2`` without overflow."""
    c = np.asarray(c, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        return np.where(c < 0, np.log(erfcx(-np.minimum(c, 0.0) / _SQRT2)), np.log(2.0) + log_ndtr(c) + c * c / 2)


def _log_masses(z, lam, tau):
    """Normalized log masses of the left and right branches.

    The branch weights are C_- Phi(-(z+lam)/tau) and C_+ Phi((z-lam)/tau).
    Both carry the factor exp(-(z^2 + lam^2) / (2 tau^2)), which cancels,
    leaving weights proportional to erfcx of the truncation points.
    """
    log_wl = _log_erfcx_neg(-(z + lam) / tau)
    log_wr = _log_erfcx_neg((z - lam) / tau)
    return -np.logaddexp(0.0, log_wr - log_wl), -np.logaddexp(0.0, log_wl - log_wr)


def _mills(u):
    """phi(u) / Phi(u) for any u."""
    with np.errstate(over="ignore"):
        return _SQRT_2_OVER_PI / erfcx(-u / _SQRT2)


def _log_trunc_ratio(c, d):
    """``log Phi(c - d) - log Phi(c)`` for ``d >= 0``.

    For c < 0 both terms are large and nearly equal; writing
    Phi(x) = erfcx(-x/sqrt2) exp(-x^2/2) / 2 turns the difference into
    ``-d (2c - d) / 2`` plus a well-conditioned erfcx ratio.
    """
    c, d = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(d, dtype=float))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        tail = d * (2 * c - d) / 2 + np.log(erfcx(-(c - d) / _SQRT2)) - np.log(erfcx(-c / _SQRT2))
        direct = log_ndtr(c - d) - log_ndtr(c)
    return np.where(c < 0, tail, direct)


def _solve_offset(c, target):
    """``d >= 0`` with ``_log_trunc_ratio(c, d) = target`` (``target <= 0``).

    ndtri_exp gives the start; Newton steps on the concave ratio fix the
    digits it loses when ``c`` is far in the lower tail.
    """
    log_phi_c = log_ndtr(c)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = np.maximum(c - ndtri_exp(np.minimum(target + log_phi_c, 0.0)), 0.0)
        for _ in range(_NEWTON_STEPS):
            g = _log_trunc_ratio(c, d) - target
            step = g / _mills(c - d)
            d = np.where(np.isfinite(step), np.maximum(d + step, 0.0), d)
    return d


def _quantile(q, z, lam, tau, log_ml, log_mr):
    q = np.asarray(q, dtype=float)
    c_l = -(z + lam) / tau
    c_r = (z - lam) / tau
    log_q = np.log(q)
    log_1mq = np.log1p(-q)
    with np.errstate(divide="ignore", invalid="ignore"):
        # left: P(b' < b) = m_L Phi((b - m_-)/tau) / Phi(-m_-/tau), offset -b/tau below 0
        d_l = _solve_offset(c_l, np.minimum(log_q - log_ml, 0.0))
        # right, by the upper tail: P(b' > b) = m_R Phi((m_+ - b)/tau) / Phi(m_+/tau)
        d_r = _solve_offset(c_r, np.minimum(log_1mq - log_mr, 0.0))
    # a branch holding the whole mass to working precision pins its end at 0
    return np.where(log_q <= log_ml, -tau * d_l, tau * d_r)


def _cdf(b, z, lam, tau, log_ml, log_mr):
    b = np.asarray(b, dtype=float)
    c_l = -(z + lam) / tau
    c_r = (z - lam) / tau
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lo = np.exp(log_ml + _log_trunc_ratio(c_l, np.maximum(-b / tau, 0.0)))
        hi = -np.expm1(log_mr + _log_trunc_ratio(c_r, np.maximum(b / tau, 0.0)))
    return np.where(b < 0, lo, hi)


def posterior_intervals(z, lam, quadform, sigma2, alpha):
    """Vectorized equal-tailed intervals; returns ``(lower, upper)`` arrays."""
    z = np.asarray(z, dtype=float)
    tau = np.sqrt(sigma2 / np.asarray(quadform, dtype=float))
    log_ml, log_mr = _log_masses(z, lam, tau)
    lower = _quantile(alpha / 2, z, lam, tau, log_ml, log_mr)
    upper = _quantile(1 - alpha / 2, z, lam, tau, log_ml, log_mr)
    return lower, upper


@dataclass(frozen=True)
class PiecewiseGaussianPosterior:
    z: float
    lam: float
    tau2: float
    log_c_minus: float
    log_c_plus: float
    log_mass_left: float
    log_mass_right: float

    @property
    def tau(self) -> float:
        return float(np.sqrt(self.tau2))

    @property
    def mass_left(self) -> float:
        return float(np.exp(self.log_mass_left))

    @property
    def mass_right(self) -> float:
        return float(np.exp(self.log_mass_right))

    def mode(self) -> float:
        if self.z > self.lam:
            return self.z - self.lam
        if self.z < -self.lam:
            return self.z + self.lam
        return 0.0

    def log_pdf(self, b):
        """Normalized log density."""
        b = np.asarray(b, dtype=float)
        tau = self.tau
        m = np.where(b < 0, self.z + self.lam, self.z - self.lam)
        log_mass = np.where(b < 0, self.log_mass_left, self.log_mass_right)
        log_trunc = np.where(
            b < 0,
            log_ndtr(-(self.z + self.lam) / tau),
            log_ndtr((self.z - self.lam) / tau),
        )
        return (
            log_mass
            - log_trunc
            - 0.5 * ((b - m) / tau) ** 2
            - np.log(tau * np.sqrt(2 * np.pi))
        )

    def pdf(self, b):
        return np.exp(self.log_pdf(b))

    def cdf(self, b):
        out = _cdf(b, self.z, self.lam, self.tau, self.log_mass_left, self.log_mass_right)
        return float(out) if out.ndim == 0 else out

    def quantile(self, q):
        q_arr = np.asarray(q, dtype=float)
        if np.any((q_arr <= 0) | (q_arr >= 1)):
            raise ValueError("quantile level must lie in (0, 1)")
        out = _quantile(q_arr, self.z, self.lam, self.tau, self.log_mass_left, self.log_mass_right)
        return float(out) if out.ndim == 0 else out

    def interval(self, alpha: float = 0.2) -> tuple[float, float]:
        """Equal-tailed interval. It holds the mode exactly when
        ``alpha/2 <= cdf(mode) <= 1 - alpha/2``, which can fail for a mode
        of 0 with most of the mass on one side."""
        if not 0 < alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        return self.quantile(alpha / 2), self.quantile(1 - alpha / 2)


def build_posterior(z: float, lam: float, quadform_a: float, sigma2: float) -> PiecewiseGaussianPosterior:
    """Posterior from a Normal likelihood centered at ``z`` with precision
    ``quadform_a / sigma2`` and the Laplace prior implied by ``lam``."""
    if not quadform_a > 0:
        raise DegenerateProjectionError("feature fully explained by active set")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    tau2 = sigma2 / quadform_a
    tau = np.sqrt(tau2)
    log_c = z * lam * quadform_a / sigma2
    log_ml, log_mr = _log_masses(float(z), float(lam), tau)
    return PiecewiseGaussianPosterior(
        z=float(z),
        lam=float(lam),
        tau2=float(tau2),
        log_c_minus=float(log_c),
        log_c_plus=float(-log_c),
        log_mass_left=float(log_ml),
        log_mass_right=float(log_mr),
    )


def mode(post: PiecewiseGaussianPosterior) -> float:
    return post.mode()


def quantile(post: PiecewiseGaussianPosterior, q):
    return post.quantile(q)


def interval(post: PiecewiseGaussianPosterior, alpha: float = 0.2) -> tuple[float, float]:
    return post.interval(alpha)


def normal_quantile(q):
    return ndtri(q)
