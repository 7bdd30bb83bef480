import logging
import pathlib
from typing import Union

import numpy as np
import pandas as pd
import torch
from tqdm.auto import tqdm

from ... import __version__
from ...errors import ConfigurationError
from ...snn.network import NetworkSpec, forward_network
from ...utils.data import DatasetHandle, load_batch
from ...utils.directories import prepare_task_dir, record_run
from ...utils.metrics import SparsityCounter, SparsityReport
from ..evaluation.eval_run import load_eval_dataset, load_model
from .sparsity_config import SparsityConfig

__all__ = ["sparsity_profile", "run_sparsity"]

logger = logging.getLogger(__name__)


def sparsity_profile(
    model: Union[NetworkSpec, str],
    dataset: DatasetHandle,
    n_samples: int = 100,
    batch_size: int = 64,
) -> SparsityReport:
    """
    Spike-count histogram of every spiking layer over the first `n_samples`
    samples of `dataset`. `model` is a network or a checkpoint path.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    net = load_model(model)[0] if isinstance(model, (str, pathlib.Path)) else model
    dataset = dataset.head(n_samples)
    names = [layer.name for layer in net.spiking_layers]
    counter = SparsityCounter(net.n_steps)

    order = np.arange(len(dataset))
    with torch.no_grad():
        for start in tqdm(range(0, len(order), batch_size), desc="Counting spikes", leave=False):
            inputs, _ = load_batch(
                dataset, order[start : start + batch_size], net.n_steps, net.input_shape
            )
            state = forward_network(inputs, net)
            counts = [r.spikes.counts() for r in state.records if r.spikes is not None]
            counter.update(counts, names)

    report = counter.report()
    logger.info(
        "%.1f%% of neurons silent over %d samples",
        100.0 * report.silent_fraction(),
        report.n_samples,
    )
    return report


def _summary(report: SparsityReport) -> dict:
    row = {"n_samples": report.n_samples}
    for layer, hist in report.histogram.items():
        key = layer.replace(" ", "_")
        row[f"silent_{key}"] = float(hist[0])
        row[f"mean_spikes_{key}"] = float(np.dot(np.arange(len(hist)), hist))
    return row


def run_sparsity(config: SparsityConfig) -> SparsityReport:
    """
    Profile a checkpoint and write ``results/<run>_<dataset>-sparsity.csv``
    (silent fractions and mean spike counts) plus the full histograms.
    """
    net, run = load_model(config.checkpoint, config.run_config)
    dataset = load_eval_dataset(config, run)
    report = sparsity_profile(net, dataset, config.n_samples, config.batch_size)

    task_path = prepare_task_dir(config)
    run_name = config.run_name or run.resolved_run_name
    dataset_name = config.dataset_name or (
        pathlib.Path(config.data_dir).name if config.data_dir else run.resolved_dataset_name
    )
    record_run(
        task_path,
        run_name,
        {"config": config.to_dict(), "run_config": run.to_dict(), "version": __version__},
    )

    stem = f"{run_name}_{dataset_name}"
    pd.DataFrame([_summary(report)]).to_csv(
        task_path / "results" / f"{stem}-sparsity.csv", index=False
    )
    hist = report.to_frame()
    hist.insert(0, "run", run_name)
    hist.insert(1, "dataset", dataset_name)
    hist.to_csv(task_path / f"{stem}-histogram.csv", index=False)
    bands = report.bands_frame()
    bands.insert(0, "run", run_name)
    bands.insert(1, "dataset", dataset_name)
    bands.to_csv(task_path / f"{stem}-bands.csv", index=False)
    return report
