"""Message-passing solver for ``Y = U A X + W``.

One iteration runs the signal side first and the permutation side second:

* The bilinear LMMSE step on ``X`` treats the current soft permutation
  ``U_hat`` as a noisy matrix with a scalar error summary. It exchanges a
  Gaussian message with the separable prior on ``X`` through EP division.
* The permutation side scores every (row, column) pairing against the
  current ``V_hat = (A X_hat)^T``. It runs a few rounds of binary BP between
  the row-wise and the column-wise assignment constraints. The messages are
  LLRs and extrinsic information is formed by subtraction.

The row scores are tempered by a factor ``beta <= 1`` that grows
geometrically. Early iterations therefore keep the permutation soft while
``X_hat`` is still poor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linear_sum_assignment

from .denoisers import (
    bp_extrinsic,
    column_posterior_llr,
    ep_extrinsic,
    mean_clip,
    posterior_x,
    row_permutation_denoise,
    row_posterior_llr,
)
from .errors import SingularSystem
from .model import (
    GroundTruth,
    ProblemInstance,
    SignalPrior,
    SolverConfig,
    perm_to_matrix,
    validate_instance,
)


@dataclass(frozen=True)
class SolverState:
    X_e_minus: np.ndarray
    gamma_X_e_minus: float
    X_e_plus: np.ndarray
    gamma_X_e_plus: float
    X_p_minus: np.ndarray
    gamma_X_p_minus: float
    Sigma_X: np.ndarray
    U_p_minus: np.ndarray
    V_hat: np.ndarray
    llr_minus_e: np.ndarray
    llr_plus_e: np.ndarray
    B_U: np.ndarray
    Lambda_U_diag: np.ndarray
    Lambda_X: np.ndarray
    b_X: np.ndarray
    gamma0: float
    beta: float = 0.0
    t: int = 0

    @property
    def R_U(self):
        """Diagonal and off-diagonal entries of the scalar-structured error of U."""
        N = self.U_p_minus.shape[0]
        tau = float(np.sum(self.U_p_minus * (1.0 - self.U_p_minus))) / N
        return tau, (-tau / (N - 1) if N > 1 else 0.0)


@dataclass(frozen=True)
class XStep:
    X_p: np.ndarray
    gamma_p: float
    Lambda_X: np.ndarray
    b_X: np.ndarray
    Sigma: np.ndarray


@dataclass
class Solution:
    U_soft: np.ndarray
    U_hard: np.ndarray
    X_hat: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    state: Optional[SolverState] = None


def init_state(inst: ProblemInstance, prior: SignalPrior, config: SolverConfig,
               U_init=None):
    """Uninformative start, or a start pinned to the permutation ``U_init``."""
    N, M, R = inst.N, inst.M, inst.R
    clamp = config.llr_clamp
    if U_init is None:
        U = np.full((N, N), 1.0 / N)
        l0 = -math.log(N - 1) if N > 1 else clamp
        llr = np.full((N, N), float(np.clip(l0, -clamp, clamp)))
    else:
        U = perm_to_matrix(U_init)
        llr = np.where(U > 0, clamp, -clamp)
    floor = config.precision_floor
    gamma_e = 1.0 / max(prior.second_moment, floor)
    gamma_e = float(min(gamma_e, 1.0 / floor))
    zeros = np.zeros((R, M))
    return SolverState(
        X_e_minus=zeros, gamma_X_e_minus=gamma_e,
        X_e_plus=zeros, gamma_X_e_plus=floor,
        X_p_minus=zeros, gamma_X_p_minus=gamma_e, Sigma_X=np.eye(R) / gamma_e,
        U_p_minus=U, V_hat=np.zeros((M, N)),
        llr_minus_e=llr, llr_plus_e=llr.copy(),
        B_U=np.zeros((N, N)), Lambda_U_diag=np.zeros(N),
        Lambda_X=np.zeros((R, R)), b_X=zeros, gamma0=inst.gamma0,
    )


def _signal_power(inst):
    # per-entry power of U A X implied by Y, never below a tiny positive floor
    return max(float(np.mean(inst.Y ** 2)) - 1.0 / inst.gamma0, 1e-12)


def _u_correlation(U):
    N = U.shape[0]
    tau = float(np.sum(U * (1.0 - U))) / N
    if N == 1:
        return tau, tau * np.eye(1)
    off = np.ones((N, N)) - np.eye(N)
    return tau, tau * (np.eye(N) - off / (N - 1))


def bilmmse_x(state: SolverState, inst: ProblemInstance, config: SolverConfig):
    """LMMSE estimate of ``X`` given the soft permutation.

    The error of ``U_hat`` is folded into the effective noise precision
    ``gamma_X = 1 / (1/gamma0 + tau * P)`` with ``tau`` the per-row error
    energy of ``U_hat`` and ``P`` the per-entry signal power.
    """
    A, Y = inst.A, inst.Y
    U = state.U_p_minus
    tau, SC = _u_correlation(U)
    gX = 1.0 / (1.0 / inst.gamma0 + tau * _signal_power(inst))
    Lambda_V = gX * (U.T @ U + SC)
    B_V = U.T @ Y
    if config.onsager:
        B_V = B_V - SC @ state.V_hat.T
    B_V = gX * B_V
    Lambda_X = A.T @ Lambda_V @ A
    Lambda_X = 0.5 * (Lambda_X + Lambda_X.T)
    b_X = A.T @ B_V
    R = inst.R
    K = state.gamma_X_e_minus * np.eye(R) + Lambda_X
    try:
        cf = cho_factor(K, lower=True)
    except LinAlgError:
        K = K + config.precision_floor * np.trace(K) / R * np.eye(R)
        try:
            cf = cho_factor(K, lower=True)
        except LinAlgError as exc:
            raise SingularSystem("signal-side system is not positive definite") from exc
    Sigma = cho_solve(cf, np.eye(R))
    Sigma = 0.5 * (Sigma + Sigma.T)
    X_p = cho_solve(cf, state.gamma_X_e_minus * state.X_e_minus + b_X)
    gamma_p = R / float(np.trace(Sigma))
    return XStep(X_p, gamma_p, Lambda_X, b_X, Sigma)


def bilmmse_u(state: SolverState, inst: ProblemInstance, config: SolverConfig, G=None):
    """Row messages ``(B_U, Lambda_U_diag)`` and the tempering factor.

    ``G`` is the posterior covariance of the rows of ``V`` (``A Sigma_X A^T``).
    The score of pairing observation ``i`` with row ``k`` is
    ``B_U[i, k] - Lambda_U_diag[k] / 2``.
    """
    if G is None:
        G = inst.A @ state.Sigma_X @ inst.A.T
    Y, V, U = inst.Y, state.V_hat, state.U_p_minus
    M = inst.M
    g0 = inst.gamma0
    YV = Y @ V
    vsq = np.sum(V * V, axis=0)
    if config.u_score == "predictive":
        c = np.maximum(1.0 / g0 + np.diag(G), config.precision_floor)
        ysq = np.sum(Y * Y, axis=1)
        num = 2.0 * YV - ysq[:, None]
        if config.onsager:
            num = num - 2.0 * M * (U @ G)
        B = num / (2.0 * c[None, :])
        lam = vsq / c + M * np.log(c / c.min())
        inv_c = float(np.mean(1.0 / c))
    else:
        RV = float(np.mean(np.diag(G)))
        gU = 1.0 / (1.0 / g0 + RV)
        B = YV - (M * RV * U if config.onsager else 0.0)
        B = gU * B
        lam = gU * (vsq + M * RV)
        inv_c = gU
    beta = 1.0
    if config.anneal:
        cap = config.anneal_start * config.anneal_rate ** state.t
        beta = min(1.0, cap / (M * _signal_power(inst) * inv_c))
    return beta * B, beta * lam, beta


def _assignment_bp(B, lam, llr_minus, rounds, clamp):
    lm = llr_minus
    for _ in range(rounds):
        Un, _ = row_permutation_denoise(B, lam[None, :], lm)
        llr_pe = bp_extrinsic(row_posterior_llr(B, lam[None, :], lm), lm, clamp)
        lm = bp_extrinsic(column_posterior_llr(llr_pe), llr_pe, clamp)
    return Un, llr_pe, lm


def iterate(state: SolverState, inst: ProblemInstance, prior: SignalPrior,
            config: SolverConfig) -> SolverState:
    d = config.damping
    floor = config.precision_floor
    xs = bilmmse_x(state, inst, config)
    ge, Xe = state.gamma_X_e_minus, state.X_e_minus

    # EP exchange with the prior, damped in natural parameters
    X_ep, g_ep = ep_extrinsic(xs.X_p, xs.gamma_p, Xe, ge, floor)
    m, g_pp = posterior_x(X_ep, g_ep, prior, floor)
    if g_pp - g_ep < floor:
        # the prior adds no usable precision; keep the previous message
        g1, h1 = ge, ge * Xe
    else:
        g1 = g_pp - g_ep
        h1 = g_pp * m - g_ep * X_ep
    if state.t > 0:
        g1 = d * g1 + (1.0 - d) * ge
        h1 = d * h1 + (1.0 - d) * ge * Xe

    V_hat = (inst.A @ xs.X_p).T
    G = inst.A @ xs.Sigma @ inst.A.T
    mid = replace(state, V_hat=V_hat, Sigma_X=xs.Sigma)
    B, lam, beta = bilmmse_u(mid, inst, config, G)
    Un, llr_pe, llr_me = _assignment_bp(B, lam, state.llr_minus_e,
                                        config.bp_inner, config.llr_clamp)
    U = d * Un + (1.0 - d) * state.U_p_minus
    llr_me = d * llr_me + (1.0 - d) * state.llr_minus_e

    return replace(
        state,
        X_e_minus=h1 / g1, gamma_X_e_minus=float(g1),
        X_e_plus=X_ep, gamma_X_e_plus=float(g_ep),
        X_p_minus=xs.X_p, gamma_X_p_minus=xs.gamma_p, Sigma_X=xs.Sigma,
        U_p_minus=U, V_hat=V_hat,
        llr_minus_e=llr_me, llr_plus_e=llr_pe,
        B_U=B, Lambda_U_diag=lam, Lambda_X=xs.Lambda_X, b_X=xs.b_X,
        beta=beta, t=state.t + 1,
    )


def round_permutation(U_soft, eps=None):
    """Maximum-likelihood hard assignment with a lexicographic tie-break.

    Maximizes ``sum_i log max(U_soft[i, pi(i)], eps)``. Among optimal
    assignments the lexicographically smallest index map is returned.
    """
    U_soft = np.asarray(U_soft, dtype=float)
    N = U_soft.shape[0]
    if eps is None:
        eps = mean_clip()
    C = -np.log(np.maximum(U_soft, eps))
    _, perm = linear_sum_assignment(C)
    best = float(C[np.arange(N), perm].sum())
    tol = 1e-9 * max(1.0, abs(best))
    used = np.zeros(N, dtype=bool)
    fixed_cost = 0.0
    for i in range(N):
        rest = np.arange(i + 1, N)
        for j in np.flatnonzero(~used):
            if j >= perm[i]:
                break
            cols = np.flatnonzero(~used)
            cols = cols[cols != j]
            base = fixed_cost + C[i, j]
            if rest.size:
                sub = C[np.ix_(rest, cols)]
                if base + sub.min(axis=1).sum() > best + tol:
                    continue
                r, c = linear_sum_assignment(sub)
                total = base + sub[r, c].sum()
            else:
                total, c = base, np.array([], dtype=int)
            if total <= best + tol:
                perm[i] = j
                perm[rest] = cols[c]
                break
        used[perm[i]] = True
        fixed_cost += C[i, perm[i]]
    return perm


def solve(inst: ProblemInstance, prior: SignalPrior = SignalPrior(),
          config: SolverConfig = SolverConfig(),
          ground_truth: Optional[GroundTruth] = None, U_init=None) -> Solution:
    """Iterate to convergence or ``config.t_max``.

    ``U_init`` pins the start to a permutation with saturated LLRs. Such a
    start already carries a good signal estimate after the first signal-side
    step, so the tempering of the row scores is skipped.
    """
    validate_instance(inst)
    if U_init is not None and config.anneal:
        config = replace(config, anneal=False)
    state = init_state(inst, prior, config, U_init)
    N = inst.N
    trace = []
    x_ref = None
    if ground_truth is not None:
        x_ref = np.linalg.norm(ground_truth.X)
    converged = False
    for _ in range(config.t_max):
        new = iterate(state, inst, prior, config)
        x_prev = np.linalg.norm(state.X_p_minus)
        dx = np.linalg.norm(new.X_p_minus - state.X_p_minus) / x_prev if x_prev > 0 else math.inf
        du = np.linalg.norm(new.U_p_minus - state.U_p_minus) / N
        rec = {"t": new.t, "delta_x": float(dx), "delta_u": float(du),
               "beta": new.beta, "gamma_x": new.gamma_X_p_minus}
        if x_ref:
            rec["nrmse_x"] = float(np.linalg.norm(new.X_p_minus - ground_truth.X) / x_ref)
        trace.append(rec)
        state = new
        if max(dx, du) < config.xi:
            converged = True
            break
    U_hard = round_permutation(state.U_p_minus, mean_clip(config.llr_clamp))
    return Solution(state.U_p_minus, U_hard, state.X_p_minus, state.t,
                    converged, trace, state)
