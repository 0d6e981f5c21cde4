"""Loss functionals: alignment, the path-constrained form, loss forms."""

import numpy as np
import pytest

from ccmqd.channels import NoiseSchedule, build_forward_sequence
from ccmqd.diffusion import run_forward
from ccmqd.linalg import make_rng
from ccmqd.losses import (
    LossSpec,
    align_index,
    build_references,
    evaluate_chain,
)
from ccmqd.states import DensityMatrix, fidelity, random_pure_state
from ccmqd.stiefel import apply_backward, init_backward
from ccmqd.training import pc_loss


def _traj(n_qubits=1, length=4, seed=5):
    rng = make_rng(seed)
    target = random_pure_state(n_qubits, rng)
    seq = build_forward_sequence(
        NoiseSchedule(family="haar_random", length=length, n_ops=3, seed=seed),
        2**n_qubits,
    )
    return run_forward(target, seq)


def test_loss_spec_validation():
    with pytest.raises(ValueError):
        LossSpec(kind="bogus")
    with pytest.raises(ValueError):
        LossSpec(kind="pc", lam=-0.1)
    with pytest.raises(ValueError):
        LossSpec(kind="hqto", loss_form="bogus")


def test_align_index_identity_when_equal():
    assert align_index(3, 10, 10) == 3


def test_align_index_downsamples():
    assert align_index(4, 12, 6) == 2


def test_align_index_rounds_half_away_from_zero():
    # t=1, L_b=12, L_f=6 gives 0.5, which rounds up to 1
    assert align_index(1, 12, 6) == 1


def test_align_index_endpoints():
    assert align_index(0, 12, 6) == 0
    assert align_index(12, 12, 6) == 6
    with pytest.raises(ValueError):
        align_index(13, 12, 6)
    with pytest.raises(ValueError):
        align_index(-1, 12, 6)


def test_pc_loss_zero_at_perfect_reconstruction():
    # backward entry t pairs with forward entry t, so feeding the forward
    # trajectory back in reproduces every reference exactly
    traj = _traj()
    spec = LossSpec(kind="pc", lam=1.0)
    assert pc_loss(traj, list(traj.states), spec) == pytest.approx(0.0, abs=1e-12)


def test_pc_loss_lambda_zero_reduces_to_endpoint():
    traj = _traj()
    rng = make_rng(8)
    model = init_backward(4, 3, 2, rng)
    backward = apply_backward(model, traj.states[-1])
    expected = 1 - fidelity(traj.states[0], backward[0])
    loss = pc_loss(traj, backward, LossSpec(kind="pc", lam=0.0))
    assert loss == pytest.approx(expected, abs=1e-12)


def test_pc_loss_formula_arithmetic():
    # lambda=1, unit weights, every fidelity 0.9, ten path terms:
    # (1 - 0.9) + 1 * 10 * (1 - 0.9) = 1.1
    l_b = 10
    rho_ref = np.diag([1.0, 0.0]).astype(complex)
    sigma = np.diag([0.9, 0.1]).astype(complex)

    class _FakeTraj:
        steps = l_b
        states = tuple(DensityMatrix.from_matrix(rho_ref) for _ in range(l_b + 1))

    refs = build_references(_FakeTraj(), l_b)
    states = np.stack([sigma] * (l_b + 1))
    spec = LossSpec(kind="pc", lam=1.0)
    ev = evaluate_chain(states, refs, spec, np.ones(l_b))
    assert ev.loss == pytest.approx(1.1, abs=1e-12)


def test_pc_loss_rejects_wrong_kind():
    traj = _traj()
    with pytest.raises(ValueError):
        pc_loss(traj, list(traj.states), LossSpec(kind="hqto"))


def test_alpha_length_enforced():
    spec = LossSpec(kind="pc", lam=1.0, alpha=(1.0, 2.0))
    with pytest.raises(ValueError):
        spec.resolve_alpha(3)
    np.testing.assert_allclose(spec.resolve_alpha(2), [1.0, 2.0])


def test_alpha_negative_rejected():
    with pytest.raises(ValueError):
        LossSpec(kind="pc", lam=1.0, alpha=(1.0, -0.5))


def test_lambda_scales_path_terms_linearly():
    traj = _traj()
    rng = make_rng(9)
    model = init_backward(4, 3, 2, rng)
    backward = apply_backward(model, traj.states[-1])
    base = pc_loss(traj, backward, LossSpec(kind="pc", lam=1.0))
    doubled = pc_loss(traj, backward, LossSpec(kind="pc", lam=2.0))
    endpoint = pc_loss(traj, backward, LossSpec(kind="pc", lam=0.0))
    assert doubled == pytest.approx(2 * base - endpoint, abs=1e-12)


def test_pc_lambda_zero_matches_hqto_bitwise():
    # with no active path terms the two kinds walk the same code path,
    # so the values must agree exactly, not just within tolerance
    traj = _traj(n_qubits=2, length=5, seed=11)
    rng = make_rng(11)
    model = init_backward(5, 2, 4, rng)
    states = np.stack([s.mat for s in apply_backward(model, traj.states[-1])])
    refs = build_references(traj, 5)
    alpha = np.ones(5)
    a = evaluate_chain(states, refs, LossSpec(kind="hqto"), alpha).loss
    b = evaluate_chain(states, refs, LossSpec(kind="pc", lam=0.0), alpha).loss
    assert abs(a - b) == 0.0


def test_neg_sqrt_form_endpoint_value():
    traj = _traj()
    rng = make_rng(10)
    model = init_backward(4, 3, 2, rng)
    states = np.stack([s.mat for s in apply_backward(model, traj.states[-1])])
    refs = build_references(traj, 4)
    alpha = np.ones(4)
    a = evaluate_chain(states, refs, LossSpec(kind="hqto"), alpha).loss
    b = evaluate_chain(
        states, refs, LossSpec(kind="hqto", loss_form="neg_sqrt_F"), alpha
    ).loss
    # endpoint forms: 1 - f^2 in [0, 1] versus -f in [-1, 0]
    assert 0.0 <= a <= 1.0
    assert -1.0 <= b <= 0.0
    f = np.sqrt(1 - a)
    assert b == pytest.approx(-f, abs=1e-12)


def test_fidelity_curve_values_in_range():
    traj = _traj(n_qubits=2, length=5)
    rng = make_rng(12)
    model = init_backward(5, 2, 4, rng)
    states = np.stack([s.mat for s in apply_backward(model, traj.states[-1])])
    refs = build_references(traj, 5)
    ev = evaluate_chain(
        states, refs, LossSpec(kind="hqto"), np.ones(5), want_curve=True
    )
    assert len(ev.fidelity_curve) == 6
    for f in ev.fidelity_curve:
        assert 0.0 <= f <= 1.0
