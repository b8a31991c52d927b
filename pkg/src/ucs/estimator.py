"""scikit-learn style wrapper around :func:`ucs.engine.solve`."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_array, check_is_fitted

from .engine import solve
from .model import ProblemInstance, SignalPrior, SolverConfig


def estimate_noise_precision(Y, rank):
    """Per-entry noise precision from the singular values of ``Y`` past ``rank``.

    Needs ``min(Y.shape) > rank``. For an i.i.d. noise matrix each trailing
    singular value squared carries on average ``max(N, M) - rank`` noise
    entries worth of variance.
    """
    Y = np.asarray(Y, dtype=float)
    N, M = Y.shape
    if min(N, M) <= rank:
        raise ValueError("noise level is not identifiable: min(N, M) <= rank; "
                         "pass noise_precision")
    s = np.linalg.svd(Y, compute_uv=False)
    tail = s[rank:] ** 2
    var = tail.sum() / ((N - rank) * (M - rank))
    return 1.0 / max(var, np.finfo(float).tiny)


class UnlabeledSensingRegressor(RegressorMixin, BaseEstimator):
    """Recover ``X`` and the row permutation in ``Y = U A X + W``.

    ``fit(A, Y)`` takes the N x R sensing matrix as the design matrix and the
    N x M observations as multi-output targets. The rows of ``Y`` are assumed
    shuffled relative to the rows of ``A``.

    Parameters
    ----------
    noise_precision : float or None
        Per-entry precision of ``W``. Estimated from the trailing singular
        values of ``Y`` when None (requires ``min(N, M) > R``).
    rho, sigma_x2 : Bernoulli-Gaussian prior on the entries of ``X``.
    xi, t_max, damping, u_score, anneal, bp_inner : solver settings, see
        :class:`ucs.model.SolverConfig`.

    Attributes
    ----------
    signal_ : ndarray (R, M), the estimate of ``X``.
    coef_ : ndarray (M, R), ``signal_.T`` in the usual linear-model layout.
    permutation_ : ndarray (N,), ``permutation_[i]`` is the row of ``A``
        matched to observation ``i``.
    U_soft_ : ndarray (N, N), soft assignment posterior.
    n_iter_, converged_, noise_precision_
    """

    def __init__(self, noise_precision=None, rho=0.0, sigma_x2=1.0, xi=1e-6, t_max=500,
                 damping=0.8, u_score="predictive", anneal=True, bp_inner=10):
        self.noise_precision = noise_precision
        self.rho = rho
        self.sigma_x2 = sigma_x2
        self.xi = xi
        self.t_max = t_max
        self.damping = damping
        self.u_score = u_score
        self.anneal = anneal
        self.bp_inner = bp_inner

    def fit(self, A, Y):
        A = check_array(A)
        Y = check_array(Y)
        if A.shape[0] != Y.shape[0]:
            raise ValueError(f"A has {A.shape[0]} rows, Y has {Y.shape[0]}")
        gamma = self.noise_precision
        if gamma is None:
            gamma = estimate_noise_precision(Y, A.shape[1])
        inst = ProblemInstance.from_physical(Y, A, gamma)
        cfg = SolverConfig(xi=self.xi, t_max=self.t_max, damping=self.damping,
                           u_score=self.u_score, anneal=self.anneal, bp_inner=self.bp_inner)
        sol = solve(inst, SignalPrior(self.rho, self.sigma_x2), cfg)
        self.signal_ = sol.X_hat
        self.coef_ = sol.X_hat.T
        self.permutation_ = sol.U_hard
        self.U_soft_ = sol.U_soft
        self.n_iter_ = sol.iterations
        self.converged_ = sol.converged
        self.noise_precision_ = float(gamma)
        self.n_features_in_ = A.shape[1]
        return self

    def predict(self, A):
        """Noise-free rows ``A X_hat``, in the row order of ``A``."""
        check_is_fitted(self, "signal_")
        A = check_array(A)
        return A @ self.signal_

    def fitted_observations(self, A):
        """``U_hat A X_hat``: predictions in the (shuffled) order of ``Y``."""
        return self.predict(A)[self.permutation_]

    def score(self, A, Y, sample_weight=None):
        """R^2 of ``Y`` against ``A X_hat`` after optimally matching rows.

        The row order of ``Y`` is unknown, so the rows of the prediction are
        first assigned to the rows of ``Y`` by least squares.
        """
        P = self.predict(A)
        Y = check_array(Y)
        cost = (np.sum(Y * Y, 1)[:, None] - 2 * Y @ P.T + np.sum(P * P, 1)[None, :])
        _, cols = linear_sum_assignment(cost)
        return r2_score(Y, P[cols], sample_weight=sample_weight)
