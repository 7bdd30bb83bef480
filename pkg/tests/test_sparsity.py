import numpy as np
import pytest
import torch

from tssl_snn import (
    BAND_LABELS,
    ConfigurationError,
    SparsityCounter,
    sparsity_profile,
    synthetic_dataset,
)

from .utils import random_network


def test_zero_weights_are_fully_silent():
    net = random_network("6-8-3", n_steps=4)
    for layer in net.layers:
        layer.weights = torch.zeros_like(layer.weights)
    report = sparsity_profile(net, synthetic_dataset(5, (6,), 3, 4), n_samples=5)
    assert report.n_samples == 5
    assert report.silent_fraction() == 1.0
    for layer in net.spiking_layers:
        assert report.silent_fraction(layer.name) == 1.0


def test_histograms_sum_to_one():
    net = random_network("6-8-3", n_steps=4, seed=2)
    data = synthetic_dataset(7, (6,), 3, 4, rate=0.6)
    report = sparsity_profile(net, data, n_samples=7, batch_size=3)
    for hist in report.histogram.values():
        assert len(hist) == 5
        assert float(np.sum(hist)) == pytest.approx(1.0, abs=1e-9)
    frame = report.to_frame()
    assert set(frame["layer"]) == {layer.name for layer in net.spiking_layers} | {"overall"}
    bands = report.bands_frame()
    assert bands.groupby("layer")["fraction"].sum().tolist() == pytest.approx([1.0] * 3)


def test_n_samples_caps_dataset():
    net = random_network("6-3", n_steps=4)
    report = sparsity_profile(net, synthetic_dataset(9, (6,), 3, 4), n_samples=4)
    assert report.n_samples == 4
    with pytest.raises(ConfigurationError):
        sparsity_profile(net, synthetic_dataset(2, (6,), 3, 4), n_samples=0)


def test_counter_bands():
    counter = SparsityCounter(n_steps=20)
    # rates 0, 5%, 10%, 15%, 50%, 100%
    counter.update([torch.tensor([[0, 1, 2, 3, 10, 20]])], names=["hidden"])
    report = counter.report()
    assert report.n_samples == 1
    assert report.histogram["hidden"][0] == pytest.approx(1 / 6)
    assert report.histogram["hidden"][20] == pytest.approx(1 / 6)
    assert report.bands["hidden"].tolist() == pytest.approx([1 / 6, 1 / 6, 1 / 6, 1 / 6, 1 / 6, 1 / 6])
    assert report.bands_frame()["band"].tolist()[:6] == list(BAND_LABELS)


def test_counter_pools_layers():
    counter = SparsityCounter(n_steps=2)
    counter.update([torch.tensor([[0, 0]]), torch.tensor([[2, 1, 1, 0]])])
    counter.update([torch.tensor([[0, 1]]), torch.tensor([[0, 0, 0, 0]])])
    report = counter.report()
    assert report.n_samples == 2
    assert report.histogram["layer 0"].tolist() == pytest.approx([0.75, 0.25, 0.0])
    # overall pools both layers per sample: (3/6 + 5/6) / 2
    assert report.silent_fraction() == pytest.approx(2 / 3)
