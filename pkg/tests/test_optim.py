import math

import pytest
import torch

from tssl_snn import (
    ConfigurationError,
    ContractViolation,
    GradientSet,
    NonFiniteError,
    OptimState,
    adam_step,
    optimizer_step,
    sgd_step,
)

from .utils import random_network


def _grads(net, fill):
    return GradientSet([torch.full_like(w, fill) for w in net.weights])


def test_adam_zero_gradient_keeps_weights():
    net = random_network("4-3-2")
    before = [w.clone() for w in net.weights]
    state = OptimState.for_network(net, lr=1e-2)
    adam_step(state, _grads(net, 0.0), net)
    assert state.step == 1
    for w, b in zip(net.weights, before):
        assert torch.equal(w, b)


def test_adam_first_step_moves_by_lr_times_sign():
    net = random_network("3-2")
    before = net.weights[0].clone()
    grad = torch.tensor([[0.3, -2.0, 1e-3], [-0.5, 4.0, -0.01]], dtype=torch.float64)
    state = OptimState.for_network(net, lr=1e-3)
    adam_step(state, GradientSet([grad]), net)
    step = net.weights[0] - before
    assert torch.allclose(step, -1e-3 * grad.sign(), rtol=1e-4, atol=0)


def test_adam_bias_correction_over_steps():
    net = random_network("2-1")
    grad = GradientSet([torch.tensor([[1.0, -1.0]], dtype=torch.float64)])
    state = OptimState.for_network(net, lr=0.1)
    before = net.weights[0].clone()
    for _ in range(3):
        adam_step(state, grad, net)
    # a constant gradient gives bias-corrected moments equal to the gradient
    assert torch.allclose(net.weights[0] - before, torch.tensor([[-0.3, 0.3]], dtype=torch.float64), atol=1e-6)


def test_adam_allocates_moments_lazily():
    net = random_network("6x6-2C3-P2-3", n_steps=2)
    grads = GradientSet([None if w is None else torch.ones_like(w) for w in net.weights])
    state = OptimState(lr=1e-2)
    adam_step(state, grads, net)
    assert state.m[1] is None
    assert state.m[0].shape == net.weights[0].shape


def test_sgd_step():
    net = random_network("4-3")
    before = net.weights[0].clone()
    state = OptimState(kind="sgd", lr=0.5)
    optimizer_step(state, _grads(net, 2.0), net)
    assert torch.allclose(net.weights[0], before - 1.0)


def test_non_finite_gradient_is_reported():
    net = random_network("4-3-2")
    grads = _grads(net, 0.0)
    grads.grads[1][0, 0] = math.inf
    before = [w.clone() for w in net.weights]
    with pytest.raises(NonFiniteError) as err:
        adam_step(OptimState.for_network(net), grads, net)
    assert err.value.layer == 1
    for w, b in zip(net.weights, before):
        assert torch.equal(w, b)
    with pytest.raises(NonFiniteError):
        sgd_step(OptimState(kind="sgd"), grads, net)


def test_gradient_shape_contracts():
    net = random_network("4-3-2")
    with pytest.raises(ContractViolation):
        adam_step(OptimState.for_network(net), GradientSet([torch.zeros(3, 4)]), net)
    with pytest.raises(ContractViolation):
        adam_step(
            OptimState.for_network(net),
            GradientSet([torch.zeros(3, 4), torch.zeros(3, 3)]),
            net,
        )


@pytest.mark.parametrize(
    "kwargs", [dict(kind="rmsprop"), dict(lr=0.0), dict(beta1=1.0), dict(eps=0.0)]
)
def test_optim_state_rejects(kwargs):
    with pytest.raises(ConfigurationError):
        OptimState(**kwargs)
