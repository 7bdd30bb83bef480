import pandas as pd
import pytest

from tssl_snn import (
    EvalConfig,
    SparsityConfig,
    compare_results,
    compare_task,
    run_experiments,
)

from .utils import toy_config


@pytest.fixture
def finished(tmp_path):
    ckpt = tmp_path / "training" / "checkpoints" / "6-8-3-seed0" / "epoch-002.ckpt"
    configs = [
        toy_config(),
        toy_config(seed=1),
        EvalConfig(checkpoint=str(ckpt)),
        SparsityConfig(checkpoint=str(ckpt), n_samples=4),
    ]
    results = run_experiments(configs, shared_output_dir=str(tmp_path))
    return tmp_path, results


def test_run_experiments(finished):
    tmp_path, (first, second, evaluation, sparsity) = finished
    assert first.run_name == "6-8-3-seed0"
    assert second.run_name == "6-8-3-seed1"
    assert evaluation.n_samples == 6
    assert sparsity.n_samples == 4

    training = pd.read_csv(tmp_path / "training" / "combined-training-results.csv")
    assert sorted(training["run"]) == ["6-8-3-seed0", "6-8-3-seed1"]
    assert (tmp_path / "training" / "compare-runs-training.png").exists()

    evaluated = pd.read_csv(
        tmp_path / "evaluation" / "results" / "6-8-3-seed0_synthetic-evaluation.csv"
    )
    assert evaluated["accuracy"].iloc[0] == pytest.approx(evaluation.accuracy)
    assert (tmp_path / "evaluation" / "6-8-3-seed0_synthetic-predictions.parquet").exists()
    assert (tmp_path / "sparsity" / "6-8-3-seed0_synthetic-histogram.csv").exists()
    assert (tmp_path / "sparsity" / "compare-runs-sparsity.png").exists()


def test_compare_results_from_output_dir(finished):
    tmp_path, _ = finished
    for path in tmp_path.glob("*/combined-*-results.csv"):
        path.unlink()
    compare_results(output_dir=str(tmp_path))
    for task in ("training", "evaluation", "sparsity"):
        assert (tmp_path / task / f"combined-{task}-results.csv").exists()


def test_compare_task(finished):
    tmp_path, _ = finished
    out = tmp_path / "elsewhere"
    out.mkdir()
    compare_task("evaluation", str(tmp_path / "evaluation" / "results"), str(out))
    combined = pd.read_csv(out / "combined-evaluation-results.csv")
    assert combined["run"].tolist() == ["6-8-3-seed0"]
    with pytest.raises(ValueError):
        compare_task("routing", str(tmp_path))


def test_compare_results_arguments():
    with pytest.raises(ValueError):
        compare_results()
