"""Scalar and assignment denoisers, plus the extrinsic-message algebra.

Gaussian beliefs carry one scalar precision per matrix. Binary beliefs on the
entries of the permutation are log-likelihood ratios clamped to
``+-llr_clamp``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .errors import DegenerateDerivative, NonPositiveVariance
from .model import SignalPrior

LLR_CLAMP = 30.0
PRECISION_FLOOR = 1e-11


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    precision: float


@dataclass(frozen=True)
class RowMessage:
    b: np.ndarray
    lambda_diag: np.ndarray


def mean_clip(clamp=LLR_CLAMP):
    """Smallest admissible Bernoulli mean for a given LLR clamp."""
    return np.exp(-clamp) / (1.0 + np.exp(-clamp))


def gx_bernoulli_gaussian(r, v, prior: SignalPrior):
    """Posterior mean and variance of ``x`` given ``r = x + N(0, v)``.

    Works elementwise on arrays. The spike/slab responsibility is formed from
    log evidences so extreme ``r`` cannot overflow.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(~(v > 0)) or np.any(~np.isfinite(v)):
        raise NonPositiveVariance("noise variance must be positive and finite")
    rho, s2 = prior.rho, prior.sigma_x2
    ms = r * (s2 / (s2 + v))
    vs = s2 * v / (s2 + v)
    if rho == 0.0:
        return ms, np.broadcast_to(vs, ms.shape).copy()
    if rho == 1.0:
        return np.zeros_like(ms), np.zeros_like(ms)
    # log N(r; 0, s2 + v) - log N(r; 0, v), plus the prior odds
    log_odds = (np.log1p(-rho) - np.log(rho)
                - 0.5 * r * r * (1.0 / (s2 + v) - 1.0 / v)
                - 0.5 * np.log1p(s2 / v))
    pi = expit(log_odds)
    mean = pi * ms
    var = pi * vs + pi * (1.0 - pi) * ms * ms
    return mean, var


def posterior_x(mean_e, gamma_e, prior: SignalPrior, precision_floor=PRECISION_FLOOR):
    """Apply the prior denoiser entrywise and summarize with one precision."""
    mean, var = gx_bernoulli_gaussian(mean_e, 1.0 / gamma_e, prior)
    avg = float(np.mean(var))
    if not np.isfinite(avg) or avg < 0:
        raise DegenerateDerivative(f"average denoiser derivative is {avg}")
    gamma_p = 1.0 / max(avg, precision_floor)
    return mean, float(np.clip(gamma_p, precision_floor, 1.0 / precision_floor))


def ep_extrinsic(mean_p, gamma_p, mean_e_in, gamma_e_in, precision_floor=PRECISION_FLOOR):
    """Divide the incoming Gaussian message out of a posterior."""
    gamma_out = max(gamma_p - gamma_e_in, precision_floor)
    mean_out = (gamma_p * np.asarray(mean_p) - gamma_e_in * np.asarray(mean_e_in)) / gamma_out
    return mean_out, gamma_out


def row_permutation_denoise(b, lambda_diag, llr_minus_e):
    """Posterior marginals of a row assignment prior weighted by LLRs.

    Accepts a single row or a stack of rows (last axis is the column index).
    """
    s = np.asarray(b, dtype=float) - 0.5 * np.asarray(lambda_diag, dtype=float) \
        + np.asarray(llr_minus_e, dtype=float)
    mean = softmax(s, axis=-1)
    return mean, mean * (1.0 - mean)


def loo_logsumexp(s, axis=-1):
    """``log sum_{j != k} exp(s_j)`` for every ``k`` along ``axis``.

    The entry holding the maximum gets its sum recomputed without it; for the
    others ``log1p(-softmax)`` is accurate because their weight is <= 1/2.
    """
    s = np.moveaxis(np.asarray(s, dtype=float), axis, -1)
    lse = logsumexp(s, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        out = lse + np.log1p(-np.exp(s - lse))
    top = np.argmax(s, axis=-1)[..., None]
    rest = s.copy()
    np.put_along_axis(rest, top, -np.inf, axis=-1)
    np.put_along_axis(out, top, logsumexp(rest, axis=-1, keepdims=True), axis=-1)
    return np.moveaxis(out, -1, axis)


def row_posterior_llr(b, lambda_diag, llr_minus_e):
    """Posterior LLRs of the row denoiser, formed in the log domain so they
    are not limited by the clamp before the extrinsic subtraction."""
    s = np.asarray(b, dtype=float) - 0.5 * np.asarray(lambda_diag, dtype=float) \
        + np.asarray(llr_minus_e, dtype=float)
    return s - loo_logsumexp(s, axis=-1)


def column_posterior(llr_plus_e):
    """Posterior of a column assignment prior: softmax over rows."""
    return softmax(np.asarray(llr_plus_e, dtype=float), axis=0)


def column_posterior_llr(llr_plus_e):
    """Posterior LLRs of the column denoiser (log domain)."""
    L = np.asarray(llr_plus_e, dtype=float)
    return L - loo_logsumexp(L, axis=0)


def llr_from_mean(m, clamp=LLR_CLAMP):
    eps = mean_clip(clamp)
    m = np.clip(m, eps, 1.0 - eps)
    return np.clip(np.log(m) - np.log1p(-m), -clamp, clamp)


def mean_from_llr(llr, clamp=LLR_CLAMP):
    return expit(np.clip(llr, -clamp, clamp))


def bp_extrinsic(llr_p, llr_e_in, clamp=LLR_CLAMP):
    return np.clip(np.asarray(llr_p) - np.asarray(llr_e_in), -clamp, clamp)
