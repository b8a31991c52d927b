"""Synthetic instances, metrics and seeded sweeps."""
from __future__ import annotations

import hashlib
import itertools
import math
import struct
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .engine import solve
from .errors import BlockSizeMismatch, InputError, NotAPermutation, ZeroReference
from .model import (
    GroundTruth,
    ProblemInstance,
    SignalPrior,
    SolverConfig,
    is_permutation,
    noise_precision_for_snr,
    perm_to_matrix,
)
from .state_evolution import SEParams, se_run

KINDS = ("single", "snr_sweep", "nm_grid", "sparsity_rank_grid", "p_local")

# Noise-free instances still need a finite precision for the solver.
NOISELESS_SNR_DB = 120.0


def gen_permutation(N, rng):
    return rng.permutation(N)


def gen_p_local_permutation(N, p, rng):
    if p < 1 or N % p:
        raise BlockSizeMismatch(f"block size {p} does not divide N={N}")
    perm = np.empty(N, dtype=int)
    for start in range(0, N, p):
        perm[start:start + p] = start + rng.permutation(p)
    return perm


def gen_instance(N, M, R, prior: SignalPrior, snr_db, rng, sensing_scale=None, perm=None):
    """Draw ``(A, X, U, W)`` and assemble ``Y``.

    ``A`` has i.i.d. ``N(0, sensing_scale^2)`` entries, default scale
    ``1/sqrt(N)``. ``snr_db = inf`` gives ``W = 0``; the instance then
    carries the precision of a 120 dB channel.
    """
    if sensing_scale is None:
        sensing_scale = 1.0 / math.sqrt(N)
    A = rng.normal(size=(N, R)) * sensing_scale
    X = rng.normal(size=(R, M)) * math.sqrt(prior.sigma_x2)
    if prior.rho > 0:
        X = X * (rng.random((R, M)) >= prior.rho)
    if perm is None:
        perm = gen_permutation(N, rng)
    perm = np.asarray(perm, dtype=int)
    Z = A[perm] @ X
    if math.isinf(snr_db) and snr_db > 0:
        g = noise_precision_for_snr(Z, NOISELESS_SNR_DB)
        Y = Z.copy()
    else:
        g = noise_precision_for_snr(Z, snr_db)
        Y = Z + rng.normal(size=Z.shape) / math.sqrt(g)
    inst = ProblemInstance.from_physical(Y, A, g)
    return inst, GroundTruth(perm, X, Z)


def nrmse(P, P_hat):
    P = np.asarray(P, dtype=float)
    ref = np.linalg.norm(P)
    if ref == 0:
        raise ZeroReference("reference matrix has zero norm")
    return float(np.linalg.norm(P - np.asarray(P_hat, dtype=float)) / ref)


def _as_matrix(U):
    U = np.asarray(U)
    if U.ndim == 1:
        if sorted(U.tolist()) != list(range(U.size)):
            raise NotAPermutation("index map is not a permutation")
        return perm_to_matrix(U)
    if not is_permutation(U):
        raise NotAPermutation("matrix is not a permutation")
    return U


def hamming_distortion(U, U_hat):
    """Half the number of mismatched entries, divided by N.

    Accepts permutation matrices or index maps.
    """
    U, U_hat = _as_matrix(U), _as_matrix(U_hat)
    if U.shape != U_hat.shape:
        raise NotAPermutation("permutations of different sizes")
    return float(np.sum(U != U_hat)) / (2.0 * U.shape[0])


def child_seed(master_seed, cell_index, trial_index):
    """64-bit seed derived by hashing the triple."""
    key = struct.pack("<QQQ", int(master_seed) % 2**64, int(cell_index), int(trial_index))
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class Cell:
    N: int
    M: int
    R: int
    p: Optional[int]
    rho: float
    snr_db: float


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "single"
    N: Sequence[int] = (20,)
    M: Sequence[int] = (100,)
    R: Sequence[int] = (20,)
    p: Sequence[Optional[int]] = (None,)
    rho: Sequence[float] = (0.0,)
    snr_db: Sequence[float] = (40.0,)
    trials_per_cell: int = 1
    master_seed: int = 0
    sigma_x2: float = 1.0
    sensing_scale: Optional[float] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    se_enabled: bool = False
    se_t_max: int = 500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown experiment kind {self.kind!r}")
        for name in ("N", "M", "R", "p", "rho", "snr_db"):
            if len(getattr(self, name)) == 0:
                raise InputError(f"grid {name} is empty")
        if self.trials_per_cell < 1:
            raise InputError("trials_per_cell must be >= 1")

    def cells(self):
        return [Cell(*c) for c in itertools.product(
            self.N, self.M, self.R, self.p, self.rho, self.snr_db)]


@dataclass
class TrialRecord:
    kind: str
    N: int
    M: int
    R: int
    p: Optional[int]
    rho: float
    snr_db: float
    seed: int
    trial: int
    nrmse_x: Optional[float] = None
    hd_u: Optional[float] = None
    iterations: Optional[int] = None
    converged: Optional[bool] = None
    se_nrmse: Optional[float] = None
    wall_ms: float = 0.0
    failed: bool = False
    error: str = ""


def make_trial_instance(cell: Cell, seed, spec: ExperimentSpec):
    rng = np.random.default_rng(seed)
    prior = SignalPrior(cell.rho, spec.sigma_x2)
    perm = None
    if cell.p is not None:
        perm = gen_p_local_permutation(cell.N, cell.p, rng)
    inst, gt = gen_instance(cell.N, cell.M, cell.R, prior, cell.snr_db, rng,
                            spec.sensing_scale, perm)
    return inst, gt, prior


def run_trial(kind, cell: Cell, seed, trial, spec: ExperimentSpec, se_nrmse=None):
    t0 = time.perf_counter()
    rec = TrialRecord(kind, cell.N, cell.M, cell.R, cell.p, cell.rho, cell.snr_db,
                      seed, trial, se_nrmse=se_nrmse)
    try:
        inst, gt, prior = make_trial_instance(cell, seed, spec)
        sol = solve(inst, prior, spec.solver)
        rec.nrmse_x = nrmse(gt.X, sol.X_hat)
        rec.hd_u = hamming_distortion(gt.perm, sol.U_hard)
        rec.iterations = sol.iterations
        rec.converged = sol.converged
    except Exception as exc:  # a sweep records failures and carries on
        rec.failed = True
        rec.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    rec.wall_ms = (time.perf_counter() - t0) * 1e3
    return rec


def cell_se_nrmse(cell: Cell, spec: ExperimentSpec):
    params = SEParams.from_dims(cell.N, cell.M, cell.R, cell.snr_db,
                                SignalPrior(cell.rho, spec.sigma_x2), spec.sensing_scale)
    return se_run(params, t_max=spec.se_t_max, xi=spec.solver.xi)[-1].predicted_nrmse


def run_experiment(spec: ExperimentSpec, threads=1) -> Iterator[TrialRecord]:
    """Yield one record per (cell, trial) in grid order.

    Trials run on ``threads`` workers with BLAS pinned to one thread each, so
    the records do not depend on the thread count.
    """
    tasks = []
    for ci, cell in enumerate(spec.cells()):
        se = None
        if spec.se_enabled:
            try:
                se = cell_se_nrmse(cell, spec)
            except Exception:
                se = None
        for k in range(spec.trials_per_cell):
            tasks.append((cell, child_seed(spec.master_seed, ci, k), k, se))

    def work(task):
        cell, seed, k, se = task
        return run_trial(spec.kind, cell, seed, k, spec, se)

    with threadpool_limits(limits=1):
        if threads <= 1:
            for task in tasks:
                yield work(task)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                yield from pool.map(work, tasks)
