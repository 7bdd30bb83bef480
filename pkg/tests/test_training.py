import pandas as pd
import pytest
import torch

from tssl_snn import (
    BackpropConfig,
    ConfigurationError,
    GradientSet,
    NonFiniteError,
    OptimState,
    TargetSpec,
    batch_gradients,
    build_network,
    encode_targets,
    evaluate_network,
    init_weights,
    load_checkpoint,
    optimizer_step,
    psc_filter,
    synthetic_dataset,
    train,
    tree_reduce,
)

from .utils import random_network, toy_config


def _sequence_losses(iterations=200):
    net = init_weights(build_network("10-20-5", n_steps=5), seed=0)
    gen = torch.Generator().manual_seed(0)
    inputs = torch.rand(1, 10, 5, generator=gen, dtype=torch.float64)
    target = TargetSpec.default(5, 5, kernel_tau=net.neuron.tau_s)
    target_psc = psc_filter(encode_targets([0], target), target.kernel_tau)
    backprop = BackpropConfig(psc_convention="emergence")
    assert backprop.dead_kappa == 0.0
    state = OptimState.for_network(net, lr=1e-2)
    losses = []
    for _ in range(iterations):
        grads, loss = batch_gradients(net, inputs, target_psc, backprop)
        losses.append(loss)
        optimizer_step(state, grads, net)
    return losses


def test_sequence_learning():
    losses = _sequence_losses()
    assert losses[0] > 0
    assert min(losses) <= 0.1 * losses[0]
    assert _sequence_losses() == losses


def test_threaded_gradients_match_serial():
    net = random_network("6-8-3", seed=1)
    gen = torch.Generator().manual_seed(2)
    inputs = 2.0 * torch.rand(7, 6, 5, generator=gen, dtype=torch.float64)
    target = psc_filter(encode_targets([0, 1, 2, 0, 1, 2, 0], TargetSpec.default(3, 5, 3.0)), 3.0)
    serial, loss = batch_gradients(net, inputs, target, workers=1)
    threaded, threaded_loss = batch_gradients(net, inputs, target, workers=3)
    assert threaded_loss == pytest.approx(loss)
    for a, b in zip(serial, threaded):
        assert torch.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_tree_reduce_order():
    items = [GradientSet([torch.tensor([float(i)])]) for i in range(5)]
    assert tree_reduce(items)[0].tolist() == [10.0]
    with pytest.raises(ValueError):
        tree_reduce([])


def test_non_finite_loss_is_reported():
    net = random_network("4-2", seed=0, n_steps=3)
    inputs = torch.ones(1, 4, 3, dtype=torch.float64)
    target = torch.full((1, 2, 3), float("nan"), dtype=torch.float64)
    with pytest.raises(NonFiniteError, match="non-finite loss") as err:
        batch_gradients(net, inputs, target)
    assert err.value.layer == 0


def test_non_finite_potential_aborts_before_loss():
    net = random_network("4-3-2", seed=0, n_steps=4)
    net.layers[0].weights[1, 2] = float("nan")
    inputs = torch.ones(2, 4, 4, dtype=torch.float64)
    target = torch.zeros(2, 2, 4, dtype=torch.float64)
    with pytest.raises(NonFiniteError, match="membrane potential") as err:
        batch_gradients(net, inputs, target, workers=2)
    assert (err.value.layer, err.value.step, err.value.neuron) == (0, 0, 1)


def test_train_writes_metrics_and_checkpoints(tmp_path):
    config = toy_config(output_dir=str(tmp_path / "training"))
    result = train(config)
    assert list(result.metrics.columns) == ["epoch", "train_loss", "test_acc", "wall_ms"]
    assert result.metrics["epoch"].tolist() == [1, 2]
    ckpt_dir = tmp_path / "training" / "checkpoints" / "6-8-3-seed0"
    assert sorted(p.name for p in ckpt_dir.iterdir()) == [
        "epoch-000.ckpt",
        "epoch-001.ckpt",
        "epoch-002.ckpt",
    ]
    assert load_checkpoint(result.checkpoint, digest=result.digest).digest == result.digest
    metrics_file = tmp_path / "training" / "results" / "6-8-3-seed0_synthetic-training.csv"
    assert metrics_file.exists()


def test_zero_epochs_keeps_initial_weights(tmp_path):
    config = toy_config(epochs=0, output_dir=str(tmp_path / "training"))
    result = train(config)
    assert result.metrics.empty
    expected = init_weights(build_network("6-8-3", n_steps=4), seed=0)
    ckpt = load_checkpoint(result.checkpoint)
    for w, stored in zip(expected.weights, ckpt.weights):
        assert torch.equal(stored, w.float().double())


def test_serial_runs_are_deterministic(tmp_path):
    first = train(toy_config(output_dir=str(tmp_path / "a")))
    second = train(toy_config(output_dir=str(tmp_path / "b")))
    columns = ["epoch", "train_loss", "test_acc"]
    pd.testing.assert_frame_equal(first.metrics[columns], second.metrics[columns])
    assert open(first.checkpoint, "rb").read() == open(second.checkpoint, "rb").read()


def test_train_rejects_invalid_config(tmp_path):
    with pytest.raises(ConfigurationError):
        train(toy_config(tau_m=1.0, output_dir=str(tmp_path)))
    with pytest.raises(ConfigurationError):
        train(toy_config(dataset="idx", output_dir=str(tmp_path)))


def test_evaluate_network_leaves_weights_alone():
    net = random_network("6-8-3", n_steps=4)
    data = synthetic_dataset(9, (6,), 3, 4)
    before = [w.clone() for w in net.weights]
    first = evaluate_network(net, data, target=TargetSpec.default(3, 4, 3.0), batch_size=4)
    second = evaluate_network(net, data, target=TargetSpec.default(3, 4, 3.0), batch_size=4)
    for w, b in zip(net.weights, before):
        assert torch.equal(w, b)
    assert first.n_samples == 9
    assert first.accuracy == second.accuracy
    assert first.loss == second.loss
    assert 0.0 <= first.accuracy <= 1.0
    assert len(first.to_frame()) == 9


def test_evaluate_without_target_has_nan_loss():
    net = random_network("6-3", n_steps=4)
    result = evaluate_network(net, synthetic_dataset(2, (6,), 3, 4))
    assert result.loss != result.loss
