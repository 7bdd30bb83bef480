import logging
import pathlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import torch
from tqdm.auto import tqdm

from ... import __version__
from ...errors import ConfigurationError
from ...snn.checkpoint import apply_checkpoint, load_checkpoint
from ...snn.loss import LossReport, TargetSpec, classify, encode_targets
from ...snn.network import NetworkSpec, forward_network
from ...snn.neuron import psc_filter
from ...utils.data import DatasetHandle, load_batch, open_dataset
from ...utils.directories import find_run_config, prepare_task_dir, record_run
from ...utils.metrics import accuracy
from ..training.train_config import RunConfig
from ..training.train_run import build_run_network, load_datasets
from .eval_config import EvalConfig

__all__ = [
    "EvalResult",
    "evaluate_network",
    "load_model",
    "evaluate",
    "run_evaluation",
    "load_eval_dataset",
]

logger = logging.getLogger(__name__)


@dataclass
class EvalResult:
    """
    Accuracy of a network on a dataset.

    `loss` is the mean per-sample van Rossum loss against the target
    patterns, or NaN when no target was given.
    """

    accuracy: float
    loss: float
    n_samples: int
    predictions: torch.Tensor
    labels: torch.Tensor

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "label": self.labels.numpy(),
                "prediction": self.predictions.numpy(),
            }
        )


def evaluate_network(
    net: NetworkSpec,
    dataset: DatasetHandle,
    target: Optional[TargetSpec] = None,
    readout: str = "psc",
    batch_size: int = 64,
    kernel_tau: Optional[float] = None,
) -> EvalResult:
    """Classify every sample of `dataset` in stored order. Weights are not touched."""
    kernel_tau = kernel_tau or net.neuron.tau_s
    order = np.arange(len(dataset))
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]

    predictions, losses = [], []
    with torch.no_grad():
        for idx in tqdm(batches, desc="Evaluating", leave=False):
            inputs, labels = load_batch(dataset, idx, net.n_steps, net.input_shape)
            state = forward_network(inputs, net)
            batch = inputs.shape[0]
            if readout == "count":
                output = state.output_spikes.raster.reshape(batch, -1, net.n_steps)
            else:
                output = state.output_psc.reshape(batch, -1, net.n_steps)
            predictions.append(classify(output, readout).reshape(-1))

            if target is not None:
                if kernel_tau == net.neuron.tau_s:
                    out_psc = state.output_psc
                else:
                    out_psc = psc_filter(state.output_spikes.raster, kernel_tau)
                out_psc = out_psc.reshape(batch, -1, net.n_steps)
                desired = psc_filter(encode_targets(labels, target), kernel_tau)
                losses.append(LossReport.from_filtered(out_psc, desired).total)

    labels = dataset.labels.to(torch.long)
    preds = torch.cat(predictions) if predictions else torch.zeros(0, dtype=torch.long)
    loss = float(torch.cat(losses).mean()) if losses else float("nan")
    return EvalResult(
        accuracy=accuracy(labels, preds),
        loss=loss,
        n_samples=len(dataset),
        predictions=preds,
        labels=labels,
    )


def load_model(
    checkpoint: str, run_config: Optional[str] = None
) -> tuple[NetworkSpec, RunConfig]:
    """
    Network and run config for `checkpoint`.

    Without `run_config` the config is looked up in the manifest of the
    training task that wrote the checkpoint.
    """
    if run_config is not None:
        config = RunConfig.from_file(run_config)
    else:
        values = find_run_config(checkpoint)
        if values is None:
            raise ConfigurationError(
                f"no training manifest entry found for {checkpoint}; pass the run config"
            )
        config = RunConfig.from_dict(values)
    net = build_run_network(config)
    ckpt = load_checkpoint(checkpoint, digest=config.digest(net.input_shape))
    apply_checkpoint(net, ckpt)
    return net, config


def evaluate(
    checkpoint: str,
    dataset: DatasetHandle,
    config: Optional[RunConfig] = None,
    readout: Optional[str] = None,
    batch_size: int = 64,
) -> EvalResult:
    """Load `checkpoint` and evaluate it on `dataset`."""
    if config is None:
        net, config = load_model(checkpoint)
    else:
        net = build_run_network(config)
        apply_checkpoint(net, load_checkpoint(checkpoint, config.digest(net.input_shape)))
    target = config.target_spec(net.output_size, dataset.n_classes)
    return evaluate_network(
        net,
        dataset,
        target=target,
        readout=readout or config.readout,
        batch_size=batch_size,
        kernel_tau=config.resolved_kernel_tau,
    )


def load_eval_dataset(config, run: RunConfig) -> DatasetHandle:
    """
    The dataset named by a task config's ``data_dir``/``split``, falling back
    to the training run's own data, cut to ``n_samples``.
    """
    if config.data_dir is not None:
        dataset = open_dataset(
            config.data_dir,
            config.split,
            n_steps=run.n_steps,
            window=run.window,
            tau=run.tau_s,
            sensor_shape=tuple(run.sensor_shape),
        )
    else:
        train_set, test_set = load_datasets(run)
        dataset = test_set if config.split == "test" else train_set
    return dataset.head(config.n_samples)


def run_evaluation(config: EvalConfig) -> EvalResult:
    """
    Evaluate a checkpoint and write
    ``results/<run>_<dataset>-evaluation.csv`` plus per-sample predictions.
    """
    if config.split not in ("train", "test"):
        raise ConfigurationError(f"unknown split {config.split!r}")
    net, run = load_model(config.checkpoint, config.run_config)
    dataset = load_eval_dataset(config, run)
    result = evaluate_network(
        net,
        dataset,
        target=run.target_spec(net.output_size, dataset.n_classes),
        readout=config.readout or run.readout,
        batch_size=config.batch_size,
        kernel_tau=run.resolved_kernel_tau,
    )

    task_path = prepare_task_dir(config)
    run_name = config.run_name or run.resolved_run_name
    dataset_name = config.dataset_name or (
        pathlib.Path(config.data_dir).name if config.data_dir else run.resolved_dataset_name
    )
    record_run(
        task_path,
        run_name,
        {
            "config": config.to_dict(),
            "run_config": run.to_dict(),
            "version": __version__,
        },
    )

    stem = f"{run_name}_{dataset_name}"
    pd.DataFrame(
        [
            {
                "accuracy": result.accuracy,
                "loss": result.loss,
                "n_samples": result.n_samples,
            }
        ]
    ).to_csv(task_path / "results" / f"{stem}-evaluation.csv", index=False)
    result.to_frame().to_parquet(task_path / f"{stem}-predictions.parquet", index=False)

    logger.info(
        "%s on %s: accuracy %.4f over %d samples",
        run_name,
        dataset_name,
        result.accuracy,
        result.n_samples,
    )
    return result
