"""Unlabeled compressed sensing with multiple measurement vectors.

Recover a row permutation ``U`` and a signal ``X`` from ``Y = U A X + W``
by message passing, and predict the achievable error by state evolution.
"""
from .engine import Solution, SolverState, iterate, round_permutation, solve
from .errors import UCSError
from .estimator import UnlabeledSensingRegressor
from .harness import ExperimentSpec, gen_instance, hamming_distortion, nrmse, run_experiment
from .model import (
    GroundTruth,
    ProblemInstance,
    SignalPrior,
    SolverConfig,
    is_permutation,
    noise_precision_for_snr,
    validate_instance,
)
from .state_evolution import SEParams, se_run

__version__ = "0.1.0"

__all__ = [
    "ExperimentSpec", "GroundTruth", "ProblemInstance", "SEParams", "SignalPrior",
    "Solution", "SolverConfig", "SolverState", "UCSError", "UnlabeledSensingRegressor",
    "gen_instance", "hamming_distortion", "is_permutation", "iterate",
    "noise_precision_for_snr", "nrmse", "round_permutation", "run_experiment",
    "se_run", "solve", "validate_instance",
]
