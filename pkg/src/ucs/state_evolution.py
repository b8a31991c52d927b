"""Scalar state evolution for the unlabeled solver.

The permutation side is summarized by two concentrated LLRs (the diagonal
and off-diagonal entries of ``LLR^-`` and ``LLR^+``) and an effective SNR
``gamma_tilde_U``. The signal side is a VAMP-style precision recursion
whose LMMSE error uses the Marchenko-Pastur closed form ``F``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import expit, roots_hermitenorm, softmax

from .denoisers import LLR_CLAMP, PRECISION_FLOOR, gx_bernoulli_gaussian
from .errors import InputError, QuadratureNotConverged
from .model import SignalPrior


_SQRT2PI = math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=None)
def _hermite_e(n):
    x, w = roots_hermitenorm(n)
    return x, w / math.sqrt(2.0 * math.pi)


class NormalQuadrature:
    """``E[f(n)]`` for ``n ~ N(0, 1)`` by Gauss-Hermite quadrature.

    Each evaluation is repeated with ``2 n + 1`` nodes. If the two results
    differ by more than ``tol`` (relative to ``max(1, |E|)``) the quadrature
    is declared unresolved.
    """

    def __init__(self, n=201, tol=1e-9, check=True):
        self.n = int(n)
        self.tol = float(tol)
        self.check = check

    def __call__(self, f):
        x, w = _hermite_e(self.n)
        coarse = float(np.dot(w, f(x)))
        if not self.check:
            return coarse
        x2, w2 = _hermite_e(2 * self.n + 1)
        fine = float(np.dot(w2, f(x2)))
        if not abs(fine - coarse) <= self.tol * max(1.0, abs(fine)):
            raise QuadratureNotConverged(
                f"{self.n} vs {2 * self.n + 1} nodes: {coarse!r} vs {fine!r}")
        return fine

    def adaptive(self, f, points=(), limit=40.0):
        """``E[f(n)]`` by adaptive Gauss-Kronrod on ``[-limit, limit]``.

        For integrands with sharp features at known ``points``. ``f`` must
        accept scalars. The error estimate plays the role of the refinement
        check.
        """
        pts = sorted(p for p in points if -limit < p < limit)
        val, err = integrate.quad(lambda n: f(n) * math.exp(-0.5 * n * n) / _SQRT2PI,
                                  -limit, limit, points=pts or None, limit=500,
                                  epsabs=0.1 * self.tol, epsrel=0.1 * self.tol)
        if self.check and not err <= self.tol * max(1.0, abs(val)):
            raise QuadratureNotConverged(f"adaptive quadrature error {err!r}")
        return float(val)


def f_tulino(x, z):
    """``F(x, z) = (sqrt(x (1 + sqrt z)^2 + 1) - sqrt(x (1 - sqrt z)^2 + 1))^2``."""
    x = np.asarray(x, dtype=float)
    rz = np.sqrt(z)
    return (np.sqrt(x * (1 + rz) ** 2 + 1) - np.sqrt(x * (1 - rz) ** 2 + 1)) ** 2


def mp_eta(alpha, beta):
    # 1 - F / (4 beta alpha); for tiny alpha use the moment series of the
    # Marchenko-Pastur law (moments 1, 1 + beta, 1 + 3 beta + beta^2)
    if alpha < 1e-6:
        return 1.0 - alpha + (1.0 + beta) * alpha ** 2 - (1.0 + 3 * beta + beta * beta) * alpha ** 3
    return 1.0 - float(f_tulino(alpha, beta)) / (4.0 * beta * alpha)


@dataclass(frozen=True)
class SEParams:
    N: int
    M: int
    R: int
    gamma_w: float
    sigma_u2: float
    sigma_A2: float
    sigma_x2: float
    prior: SignalPrior
    A: Optional[np.ndarray] = None
    quad_nodes: int = 201
    quad_tol: float = 1e-9
    precision_floor: float = PRECISION_FLOOR
    llr_clamp: float = LLR_CLAMP

    def __post_init__(self):
        if not (0 < self.beta_u <= 1 and 0 < self.beta_x <= 1):
            raise InputError("need R <= N and R <= M")
        if min(self.sigma_u2, self.sigma_A2, self.sigma_x2) <= 0:
            raise InputError("second moments must be positive")

    @classmethod
    def from_dims(cls, N, M, R, snr_db, prior: SignalPrior = SignalPrior(),
                  sensing_scale=None, **kw):
        """Parameters matching :func:`ucs.harness.gen_instance` at ``snr_db``.

        The per-entry power of ``U A X`` is ``R sigma_A2 sigma_x2``; the noise
        precision is calibrated against it and scaled by ``sqrt(M N)``.
        """
        sA2 = 1.0 / N if sensing_scale is None else sensing_scale ** 2
        sx2 = max(prior.second_moment, PRECISION_FLOOR)
        g_phys = 10.0 ** (snr_db / 10.0) / (R * sA2 * sx2)
        return cls(N, M, R, math.sqrt(M * N) * g_phys, 1.0 / N, sA2, sx2, prior, **kw)

    @property
    def beta_u(self):
        return self.R / self.N

    @property
    def beta_x(self):
        return self.R / self.M

    @property
    def quad(self):
        return NormalQuadrature(self.quad_nodes, self.quad_tol)

    @property
    def gamma_tilde_U(self):
        return self.gamma_w * self.sigma_x2 * self.sigma_A2 / math.sqrt(self.M * self.N)

    @property
    def gamma_tilde_X(self):
        return (self.gamma_w * math.sqrt(self.beta_x * self.beta_u) * self.N
                * self.sigma_u2 * self.sigma_x2 * self.sigma_A2 + 1.0)


@dataclass(frozen=True)
class SEState:
    t: int
    gamma_X_e_minus: float
    gamma_X_p_minus: float
    gamma_X_e_plus: float
    gamma_X_p_plus: float
    gamma_tilde_U: float
    gamma_tilde_X: float
    llr_diag_minus: float
    llr_offdiag_minus: float
    llr_diag_plus: float
    llr_offdiag_plus: float
    E_u_minus: float
    E_x_minus: float
    E_x_plus: float
    predicted_nrmse: float


def alpha_x(gamma_e, gamma_U_p_inv, params: SEParams):
    """Effective SNR multiplying ``A^T A`` in the LMMSE error of ``X``."""
    N = params.N
    corr = 1.0 + 1.0 / (N - 1) if N > 1 else 1.0
    return (params.gamma_w / gamma_e) * math.sqrt(params.beta_x / params.beta_u) * (
        1.0 / N - gamma_U_p_inv * params.gamma_tilde_X * corr)


def se_ex_minus(gamma_e, gamma_U_p_inv, params: SEParams):
    a = max(alpha_x(gamma_e, gamma_U_p_inv, params), params.precision_floor)
    return mp_eta(a, params.beta_u) / gamma_e


def se_ex_minus_trace(gamma_e, alpha, A):
    """Finite-size ``(1/R) tr((gamma_e I + gamma_e alpha A^T A)^{-1})``."""
    R = A.shape[1]
    ev = np.linalg.eigvalsh(A.T @ A)
    return float(np.sum(1.0 / (1.0 + alpha * ev))) / (R * gamma_e)


def se_ex_plus(gamma, prior: SignalPrior, quad: NormalQuadrature):
    """Average posterior variance of the prior denoiser at input precision ``gamma``.

    The observation is ``r = x + N(0, 1/gamma)`` with ``x`` drawn from the
    prior, so the average splits into a spike branch and a slab branch.
    """
    v = 1.0 / gamma
    rho, s2 = prior.rho, prior.sigma_x2
    if rho == 1.0:
        return 0.0
    if rho == 0.0:
        return quad(lambda n: gx_bernoulli_gaussian(n, v, prior)[1])
    # the spike/slab responsibility switches at |r| = r_c, sharply when v << s2
    r_c2 = (math.log1p(s2 / v) - 2 * (math.log1p(-rho) - math.log(rho))) / (1 / v - 1 / (s2 + v))
    out = 0.0
    for weight, sd in ((1.0 - rho, math.sqrt(s2 + v)), (rho, math.sqrt(v))):
        pts = (-math.sqrt(r_c2) / sd, math.sqrt(r_c2) / sd) if r_c2 > 0 else ()
        out += weight * quad.adaptive(
            lambda n: float(gx_bernoulli_gaussian(sd * n, v, prior)[1]), pts)
    return out


def se_llr_minus(llr_diag_plus, llr_offdiag_plus, N, clamp=LLR_CLAMP):
    if N < 2:
        raise InputError("need N >= 2")
    d = -math.log(N - 1) - llr_offdiag_plus
    if N == 2:
        o = -llr_diag_plus
    else:
        o = -float(np.logaddexp(math.log(N - 2) + llr_offdiag_plus, llr_diag_plus))
    return float(np.clip(d, -clamp, clamp)), float(np.clip(o, -clamp, clamp))


def se_llr_plus(llr_diag_minus, llr_offdiag_minus, gamma_tilde_U, N,
                quad: NormalQuadrature, clamp=LLR_CLAMP):
    if gamma_tilde_U < 0:
        raise InputError("gamma_tilde_U must be nonnegative")
    g = gamma_tilde_U
    s = math.sqrt(g)
    d = g - math.log(N - 1) - llr_offdiag_minus
    if N == 2:
        # only the diagonal competitor remains inside the log
        o = -g / 2 - quad(lambda n: g / 2 + s * n + llr_diag_minus)
    else:
        lnN2 = math.log(N - 2)
        o = -g / 2 - quad(lambda n: np.logaddexp(
            lnN2 + s * n - g / 2 + llr_offdiag_minus, g / 2 + s * n + llr_diag_minus))
    return float(np.clip(d, -clamp, clamp)), float(np.clip(o, -clamp, clamp))


def _logistic_average(f, c, s, quad: NormalQuadrature):
    """``E[f(n)]`` for an integrand that switches where ``c + s n = 0``.

    Gauss-Hermite first; a switch narrower than the node spacing falls back
    to adaptive quadrature with the switch point as a breakpoint.
    """
    try:
        return quad(f)
    except QuadratureNotConverged:
        if s == 0:
            raise
        return quad.adaptive(lambda n: float(f(n)), (-c / s,))


def se_eu_minus(llr_diag_minus, llr_offdiag_minus, gamma_tilde_U, N, quad: NormalQuadrature):
    """Per-component posterior variance of a row of ``U`` with the competing
    ``N - 1`` entries averaged by the law of large numbers."""
    g = gamma_tilde_U
    s = math.sqrt(g)
    dm, om = llr_diag_minus, llr_offdiag_minus
    # diagonal: p = sigmoid(a + s n) against N - 1 averaged competitors
    a = g / 2 + dm - om - math.log(N - 1)
    e_diag = _logistic_average(lambda n: expit(a + s * n) * expit(-a - s * n), a, s, quad)
    # off-diagonal: the component's own term stays in its denominator so that
    # p <= 1; only the other N - 2 competitors are averaged, which makes
    # p = q sigmoid(b + s n) with q = e^om / (e^(g + dm) + e^om)
    lnK = float(np.logaddexp(g + dm, om))
    q = math.exp(om - lnK)
    if N == 2:
        e_off = q * (1 - q)
    else:
        b = lnK - math.log(N - 2) - g / 2 - om

        def var_off(n):
            p = q * expit(b + s * n)
            return p * (1 - p)

        e_off = _logistic_average(var_off, b, s, quad)
    return e_diag / N + (N - 1) / N * e_off


def se_eu_minus_monte_carlo(llr_diag_minus, llr_offdiag_minus, gamma_tilde_U, N,
                            n_draws, rng, batch=10000):
    """Average of ``h'`` over full Gaussian row messages ``b = g e_1 + sqrt(g) n``.

    Returns ``(mean, standard_error)``.
    """
    g = gamma_tilde_U
    llr = np.full(N, float(llr_offdiag_minus))
    llr[0] = llr_diag_minus
    vals = []
    done = 0
    while done < n_draws:
        k = min(batch, n_draws - done)
        b = math.sqrt(g) * rng.normal(size=(k, N))
        b[:, 0] += g
        # Lambda_U = g I shifts every score by the same amount
        m = softmax(b + llr, axis=1)
        vals.append(np.mean(m * (1 - m), axis=1))
        done += k
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def llr_fixed_point(gamma_tilde_U, N, quad, start=None, damping=0.5, max_iter=200,
                    tol=1e-10, clamp=LLR_CLAMP):
    """Iterate the LLR pair from the uniform start; returns
    ``(d_minus, o_minus, d_plus, o_plus, iterations, converged)``."""
    u = -math.log(N - 1)
    dm, om = start if start is not None else (u, u)
    for it in range(1, max_iter + 1):
        dp, op = se_llr_plus(dm, om, gamma_tilde_U, N, quad, clamp)
        dm2, om2 = se_llr_minus(dp, op, N, clamp)
        change = abs(dm2 - dm) + abs(om2 - om)
        if change < tol:
            return dm2, om2, dp, op, it, True
        dm = damping * dm2 + (1 - damping) * dm
        om = damping * om2 + (1 - damping) * om
    return dm, om, dp, op, max_iter, False


def se_run(params: SEParams, t_max=500, xi=1e-6):
    """Iterate the recursion; returns the list of :class:`SEState` per step."""
    quad = params.quad
    floor = params.precision_floor
    N = params.N
    gtU, gtX = params.gamma_tilde_U, params.gamma_tilde_X
    ge = 1.0 / params.sigma_x2
    llrs = None
    out = []
    prev = None
    for t in range(1, t_max + 1):
        dm, om, dp, op, _, _ = llr_fixed_point(gtU, N, quad, llrs, clamp=params.llr_clamp)
        llrs = (dm, om)
        Eu = se_eu_minus(dm, om, gtU, N, quad)
        gU_inv = N * Eu
        Ex_m = se_ex_minus(ge, gU_inv, params)
        gp_m = 1.0 / max(Ex_m, floor)
        ge_p = max(gp_m - ge, floor)
        Ex_p = se_ex_plus(ge_p, params.prior, quad)
        gp_p = 1.0 / max(Ex_p, floor)
        nrmse = math.sqrt(max(Ex_p, 0.0) / params.sigma_x2)
        out.append(SEState(t, ge, gp_m, ge_p, gp_p, gtU, gtX, dm, om, dp, op,
                           Eu, Ex_m, Ex_p, nrmse))
        ge = max(gp_p - ge_p, floor)
        if prev is not None and abs(nrmse - prev) <= xi * max(prev, floor):
            break
        prev = nrmse
    return out
