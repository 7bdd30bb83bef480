import os

import pytest

from tssl_snn import RunConfig, open_dataset, sparsity_profile, train

MNIST_DIR = os.environ.get("TSSL_MNIST_DIR")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(MNIST_DIR is None, reason="set TSSL_MNIST_DIR to the MNIST IDX files"),
]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    config = RunConfig(
        architecture="784-400-10",
        n_steps=5,
        dataset="idx",
        dataset_name="mnist",
        data_dir=MNIST_DIR,
        n_train=1000,
        n_test=1000,
        epochs=20,
        batch_size=32,
        learning_rate=5e-4,
        serial=True,
        output_dir=str(tmp_path_factory.mktemp("mnist") / "training"),
    )
    return train(config)


def test_mnist_subset_accuracy(trained):
    assert trained.metrics["test_acc"].iloc[-1] >= 0.90


def test_trained_network_is_sparse(trained):
    test_set = open_dataset(MNIST_DIR, "test")
    report = sparsity_profile(trained.net, test_set, n_samples=1000)
    assert sum(report.histogram["overall"]) == pytest.approx(1.0, abs=1e-9)
    assert report.silent_fraction() > 0.5
