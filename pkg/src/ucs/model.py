"""Domain types for the unlabeled observation model ``Y = U A X + W``.

``U`` is an N x N permutation, ``A`` a known N x R sensing matrix, ``X`` an
R x M signal and ``W`` white Gaussian noise. Permutations are stored as
row-to-column index maps: ``perm[i] = k`` means ``U[i, k] = 1`` so that row
``i`` of ``Y`` is a noisy copy of row ``k`` of ``A X``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import (
    InputError,
    NonFinite,
    NonPositivePrecision,
    NonSquarePermutationTarget,
    NotAPermutation,
    ShapeMismatch,
    ZeroSignal,
)


def _frozen_array(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemInstance:
    """Observations and the known sensing matrix.

    ``gamma_w`` follows the scaled convention: the likelihood precision seen
    by the solver is ``gamma0 = gamma_w / sqrt(M N)``. Use
    :meth:`from_physical` to build an instance from a per-entry precision.
    """

    Y: np.ndarray
    A: np.ndarray
    N: int
    M: int
    R: int
    gamma_w: float

    @classmethod
    def from_arrays(cls, Y, A, gamma_w):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(_frozen_array(Y), _frozen_array(A), Y.shape[0], Y.shape[1],
                   A.shape[1], float(gamma_w))

    @classmethod
    def from_physical(cls, Y, A, gamma_phys):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        scale = math.sqrt(Y.shape[0] * Y.shape[1])
        return cls.from_arrays(Y, A, scale * float(gamma_phys))

    @property
    def gamma0(self):
        return self.gamma_w / math.sqrt(self.M * self.N)


@dataclass(frozen=True)
class GroundTruth:
    perm: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    @property
    def U(self):
        return perm_to_matrix(self.perm)


@dataclass(frozen=True)
class SignalPrior:
    """Bernoulli-Gaussian prior ``rho * delta(x) + (1 - rho) * N(0, sigma_x2)``.

    The Gaussian prior is the ``rho = 0`` special case.
    """

    rho: float = 0.0
    sigma_x2: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise InputError(f"rho must lie in [0, 1], got {self.rho}")
        if not (self.sigma_x2 > 0 and math.isfinite(self.sigma_x2)):
            raise InputError(f"sigma_x2 must be positive, got {self.sigma_x2}")

    @classmethod
    def gaussian(cls, sigma_x2=1.0):
        return cls(0.0, sigma_x2)

    @classmethod
    def bernoulli_gaussian(cls, rho, sigma_x2=1.0):
        return cls(rho, sigma_x2)

    @property
    def kind(self):
        return "gaussian" if self.rho == 0.0 else "bernoulli_gaussian"

    @property
    def second_moment(self):
        return (1.0 - self.rho) * self.sigma_x2


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    The last group of fields selects the likelihood scoring of the
    permutation and its tempering schedule; the defaults are the tuned
    configuration and the alternatives exist for ablations.
    """

    xi: float = 1e-6
    t_max: int = 500
    damping: float = 0.8
    llr_clamp: float = 30.0
    precision_floor: float = 1e-11
    seed: int = 0
    # "predictive" scores rows by their Gaussian predictive log-density,
    # "linear" uses the first-order b / Lambda messages.
    u_score: str = "predictive"
    onsager: bool = True
    anneal: bool = True
    anneal_start: float = 4.0
    anneal_rate: float = 1.02
    bp_inner: int = 10

    def __post_init__(self):
        if not self.xi > 0:
            raise InputError("xi must be positive")
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise InputError("t_max must be an integer >= 1")
        if not (0.0 < self.damping <= 1.0):
            raise InputError("damping must lie in (0, 1]")
        if not self.llr_clamp > 0:
            raise InputError("llr_clamp must be positive")
        if not self.precision_floor > 0:
            raise InputError("precision_floor must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise InputError("seed must be an unsigned 64-bit integer")
        if self.u_score not in ("predictive", "linear"):
            raise InputError(f"unknown u_score {self.u_score!r}")
        if self.anneal_start <= 0 or self.anneal_rate < 1.0:
            raise InputError("anneal_start must be > 0 and anneal_rate >= 1")
        if int(self.bp_inner) != self.bp_inner or self.bp_inner < 1:
            raise InputError("bp_inner must be an integer >= 1")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def validate_instance(inst: ProblemInstance):
    """Raise the first violated invariant of ``inst``; return True otherwise.

    ``A`` must have as many rows as ``Y`` so that ``U`` is square. The signal
    dimension ``R`` is free.
    """
    Y, A = np.asarray(inst.Y), np.asarray(inst.A)
    for name, v in (("N", inst.N), ("M", inst.M), ("R", inst.R)):
        if int(v) != v or v < 1:
            raise ShapeMismatch(f"{name} must be a positive integer, got {v}")
    if Y.ndim != 2 or Y.shape != (inst.N, inst.M):
        raise ShapeMismatch(f"Y has shape {Y.shape}, expected ({inst.N}, {inst.M})")
    if A.ndim != 2 or A.shape[1] != inst.R:
        raise ShapeMismatch(f"A has shape {A.shape}, expected (*, {inst.R})")
    if A.shape[0] != inst.N:
        raise NonSquarePermutationTarget(
            f"A has {A.shape[0]} rows but Y has {inst.N}; U would not be square")
    if not np.all(np.isfinite(Y)):
        raise NonFinite("Y has non-finite entries")
    if not np.all(np.isfinite(A)):
        raise NonFinite("A has non-finite entries")
    if not (inst.gamma_w > 0 and math.isfinite(inst.gamma_w)):
        raise NonPositivePrecision(f"gamma_w must be positive and finite, got {inst.gamma_w}")
    return True


def is_permutation(U):
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    if not np.all((U == 0) | (U == 1)):
        return False
    return bool(np.all(U.sum(0) == 1) and np.all(U.sum(1) == 1))


def perm_to_matrix(perm):
    perm = np.asarray(perm, dtype=int)
    U = np.zeros((perm.size, perm.size))
    U[np.arange(perm.size), perm] = 1.0
    return U


def matrix_to_perm(U):
    if not is_permutation(U):
        raise NotAPermutation("matrix is not a permutation")
    return np.argmax(np.asarray(U), axis=1)


def noise_precision_for_snr(Z, snr_db):
    """Per-entry noise precision giving ``snr_db`` relative to the power of ``Z``."""
    Z = np.asarray(Z, dtype=float)
    energy = float(np.sum(Z * Z))
    if energy == 0.0:
        raise ZeroSignal("cannot calibrate the SNR of an all-zero signal")
    return 10.0 ** (snr_db / 10.0) * Z.size / energy
