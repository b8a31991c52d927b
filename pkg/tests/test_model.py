import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ucs.errors import (
    InputError,
    NonFinite,
    NonPositivePrecision,
    NonSquarePermutationTarget,
    NotAPermutation,
    ShapeMismatch,
    ZeroSignal,
)
from ucs.harness import gen_instance
from ucs.model import (
    GroundTruth,
    ProblemInstance,
    SignalPrior,
    SolverConfig,
    is_permutation,
    matrix_to_perm,
    noise_precision_for_snr,
    perm_to_matrix,
    validate_instance,
)


def _inst(N=4, M=4, R=4, gamma=1.0, rng=None):
    rng = rng or np.random.default_rng(0)
    return ProblemInstance.from_arrays(rng.normal(size=(N, M)), rng.normal(size=(N, R)), gamma)


def test_validate_well_formed():
    assert validate_instance(_inst()) is True


def test_validate_shape_mismatch():
    inst = _inst()
    bad = ProblemInstance(np.zeros((4, 5)), inst.A, 4, 4, 4, 1.0)
    with pytest.raises(ShapeMismatch):
        validate_instance(bad)


def test_validate_zero_precision():
    with pytest.raises(NonPositivePrecision):
        validate_instance(_inst(gamma=0.0))


def test_validate_non_finite():
    inst = _inst()
    Y = np.array(inst.Y)
    Y[1, 2] = np.nan
    with pytest.raises(NonFinite):
        validate_instance(ProblemInstance.from_arrays(Y, inst.A, 1.0))


def test_validate_rows_of_A_must_match_Y():
    rng = np.random.default_rng(1)
    inst = ProblemInstance.from_arrays(rng.normal(size=(4, 6)), rng.normal(size=(5, 3)), 1.0)
    with pytest.raises(NonSquarePermutationTarget):
        validate_instance(inst)


def test_validate_accepts_R_below_N():
    assert validate_instance(_inst(N=6, M=3, R=2))


def test_instance_arrays_are_read_only():
    inst = _inst()
    with pytest.raises(ValueError):
        inst.Y[0, 0] = 1.0


def test_gamma0_scaling():
    inst = ProblemInstance.from_physical(np.ones((4, 9)), np.ones((4, 2)), 3.0)
    assert inst.gamma_w == pytest.approx(3.0 * 6.0)
    assert inst.gamma0 == pytest.approx(3.0)


def test_is_permutation_examples():
    assert is_permutation(np.eye(4))
    assert not is_permutation(np.ones((4, 4)) / 4)
    assert is_permutation(np.eye(4)[[1, 0, 2, 3]])
    assert not is_permutation(np.eye(3)[:2])


def test_perm_matrix_round_trip():
    perm = np.array([2, 0, 3, 1])
    U = perm_to_matrix(perm)
    assert U[0, 2] == 1 and U.sum() == 4
    np.testing.assert_array_equal(matrix_to_perm(U), perm)
    with pytest.raises(NotAPermutation):
        matrix_to_perm(np.ones((2, 2)))


def test_ground_truth_Z_consistent():
    inst, gt = gen_instance(6, 3, 2, SignalPrior(), 20.0, np.random.default_rng(3))
    np.testing.assert_array_equal(gt.U @ inst.A @ gt.X, gt.Z)


def test_noise_precision_examples():
    Z = np.ones((3, 5))
    assert noise_precision_for_snr(Z, 0.0) == pytest.approx(1.0)
    assert noise_precision_for_snr(Z, 20.0) == pytest.approx(100.0)
    with pytest.raises(ZeroSignal):
        noise_precision_for_snr(np.zeros((2, 2)), 10.0)


def test_signal_prior():
    assert SignalPrior.gaussian() == SignalPrior(0.0, 1.0)
    assert SignalPrior.gaussian().kind == "gaussian"
    bg = SignalPrior.bernoulli_gaussian(0.3, 2.0)
    assert bg.kind == "bernoulli_gaussian"
    assert bg.second_moment == pytest.approx(1.4)
    for rho, s2 in ((-0.1, 1.0), (1.1, 1.0), (0.5, 0.0), (0.5, math.inf)):
        with pytest.raises(InputError):
            SignalPrior(rho, s2)


def test_solver_config_defaults_and_validation():
    c = SolverConfig()
    assert (c.xi, c.t_max, c.damping, c.llr_clamp, c.precision_floor) == (1e-6, 500, 0.8, 30.0, 1e-11)
    for kw in ({"xi": 0}, {"t_max": 0}, {"damping": 0.0}, {"damping": 1.5},
               {"llr_clamp": -1}, {"precision_floor": 0}, {"seed": -1},
               {"u_score": "other"}, {"bp_inner": 0}, {"anneal_rate": 0.9}):
        with pytest.raises(InputError):
            SolverConfig(**kw)


@given(st.floats(1e-3, 1e3), st.floats(-30, 60), st.integers(0, 2**32 - 1))
def test_noise_precision_scale_covariant(c, snr, seed):
    Z = np.random.default_rng(seed).normal(size=(5, 7))
    g1 = noise_precision_for_snr(Z, snr)
    g2 = noise_precision_for_snr(c * Z, snr)
    assert g2 == pytest.approx(g1 / c ** 2, rel=1e-12)


@given(st.permutations(list(range(7))))
def test_permutation_transpose_and_orthogonality(p):
    U = perm_to_matrix(p)
    assert is_permutation(U)
    assert is_permutation(U.T)
    np.testing.assert_array_equal(U @ U.T, np.eye(7))


@given(st.integers(2, 12), st.integers(1, 12), st.integers(1, 12),
       st.sampled_from([0.0, 0.3, 0.9]), st.floats(-10, 60), st.integers(0, 2**32 - 1))
def test_validate_accepts_generated_instances(N, M, R, rho, snr, seed):
    R = min(R, N)
    rng = np.random.default_rng(seed)
    try:
        inst, gt = gen_instance(N, M, R, SignalPrior(rho), snr, rng)
    except ZeroSignal:
        return
    assert validate_instance(inst)
    assert is_permutation(gt.U)
    assert isinstance(gt, GroundTruth)
