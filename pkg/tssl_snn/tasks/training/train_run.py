import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import torch
from tqdm.auto import tqdm

from ... import __version__
from ...errors import ConfigurationError, NonFiniteError
from ...snn.backprop import BackpropConfig, GradientSet
from ...snn.checkpoint import save_checkpoint
from ...snn.loss import LossReport, TargetSpec, encode_targets
from ...snn.network import (
    NetworkSpec,
    NetworkState,
    backward_network,
    build_network,
    forward_network,
    init_weights,
    parse_architecture,
)
from ...snn.neuron import psc_filter
from ...snn.optim import OptimState, optimizer_step
from ...utils.data import (
    DatasetHandle,
    load_cifar_batch,
    load_event_dir,
    load_idx,
    make_batches,
    open_dataset,
    prefetch,
    synthetic_dataset,
)
from ...utils.directories import prepare_task_dir, record_run
from .train_config import RunConfig

__all__ = [
    "TrainResult",
    "train",
    "load_datasets",
    "build_run_network",
    "batch_gradients",
    "tree_reduce",
    "METRIC_COLUMNS",
]

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "train_loss", "test_acc", "wall_ms"]


@dataclass
class TrainResult:
    net: NetworkSpec
    metrics: pd.DataFrame
    checkpoint: str
    metrics_path: str
    digest: str
    run_name: str


def _set_wandb_vars(config: RunConfig):
    for var_name in ["WANDB_PROJECT", "WANDB_RUN_GROUP", "WANDB_JOB_TYPE"]:
        try:
            value = getattr(config, var_name.lower())
            if value is not None:
                os.environ[var_name] = value
        except AttributeError:
            pass


def _set_serial_mode(config: RunConfig):
    if config.serial:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def load_datasets(config: RunConfig) -> tuple[DatasetHandle, DatasetHandle]:
    """Train and test handles for `config`, cut to the configured subset sizes."""
    if config.dataset == "synthetic":
        input_shape, layers = parse_architecture(config.architecture, config.input_shape)
        n_classes = config.n_classes or math.prod(layers[-1].out_shape)
        train_set = synthetic_dataset(
            config.synthetic_samples,
            input_shape,
            n_classes,
            config.n_steps,
            seed=config.seed,
            rate=config.synthetic_rate,
            tau=config.tau_s,
        )
        # memorization task: evaluated on its own training samples
        test_set = train_set
    elif config.data_dir is not None and not any(
        (config.train_images, config.train_events, config.cifar_train)
    ):
        kwargs = dict(
            n_steps=config.n_steps,
            window=config.window,
            tau=config.tau_s,
            sensor_shape=tuple(config.sensor_shape),
        )
        train_set = open_dataset(config.data_dir, "train", **kwargs)
        test_set = open_dataset(config.data_dir, "test", **kwargs)
    elif config.dataset == "idx":
        train_set = load_idx(config.train_images, config.train_labels)
        test_set = load_idx(config.test_images, config.test_labels)
    elif config.dataset == "events":
        args = (config.n_steps, config.window, config.tau_s, tuple(config.sensor_shape))
        train_set = load_event_dir(config.train_events, *args)
        test_set = load_event_dir(config.test_events, *args)
    elif config.dataset == "cifar":
        train_set = load_cifar_batch(config.cifar_train)
        test_set = load_cifar_batch(config.cifar_test)
    else:
        raise ConfigurationError(f"unknown dataset kind {config.dataset!r}")

    train_set = train_set.subset(config.n_train, seed=config.seed)
    test_set = test_set.subset(config.n_test, seed=config.seed)
    logger.info("%d training / %d test samples", len(train_set), len(test_set))
    return train_set, test_set


def build_run_network(config: RunConfig) -> NetworkSpec:
    return build_network(
        config.architecture,
        config.neuron_config,
        config.n_steps,
        input_shape=config.input_shape,
        bias_current=config.bias_current,
    )


def tree_reduce(items: list) -> GradientSet:
    """Pairwise sum in a fixed order: ((g0+g1)+(g2+g3))+..."""
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]


def _first_non_finite(x: torch.Tensor) -> Optional[tuple[int, int]]:
    # x: [sample, neuron..., step] -> (step, flat neuron) of the first bad entry
    bad = torch.nonzero(~torch.isfinite(x))
    if not len(bad):
        return None
    first = bad[0].tolist()
    neuron = int(np.ravel_multi_index(first[1:-1], x.shape[1:-1]))
    return first[-1], neuron


def _check_finite_state(state: NetworkState):
    """Raise on the first non-finite membrane potential of any spiking layer."""
    for idx, record in enumerate(state.records):
        if record.trace is None:
            continue
        where = _first_non_finite(record.trace.u)
        if where is not None:
            step, neuron = where
            raise NonFiniteError(
                "non-finite membrane potential", layer=idx, step=step, neuron=neuron
            )


def _check_finite_loss(report: LossReport, out_psc: torch.Tensor, net: NetworkSpec):
    if torch.isfinite(report.total).all():
        return
    layer = len(net.layers) - 1
    where = _first_non_finite(out_psc)
    if where is not None:
        step, neuron = where
        raise NonFiniteError("non-finite loss", layer=layer, step=step, neuron=neuron)
    raise NonFiniteError("non-finite loss", layer=layer)


def _chunk_gradients(
    net: NetworkSpec,
    inputs: torch.Tensor,
    target_psc: torch.Tensor,
    backprop: BackpropConfig,
    kernel_tau: float,
) -> tuple[GradientSet, float]:
    state = forward_network(inputs, net)
    _check_finite_state(state)
    if kernel_tau == net.neuron.tau_s:
        out_psc = state.output_psc
    else:
        out_psc = psc_filter(state.output_spikes.raster, kernel_tau)
    report = LossReport.from_filtered(out_psc, target_psc)
    _check_finite_loss(report, out_psc, net)
    grads = backward_network(
        state, target_psc, net, backprop, kernel_tau=kernel_tau, reduction="sum"
    )
    return grads, report.sum()


def batch_gradients(
    net: NetworkSpec,
    inputs: torch.Tensor,
    target_psc: torch.Tensor,
    backprop: Optional[BackpropConfig] = None,
    kernel_tau: Optional[float] = None,
    workers: int = 1,
) -> tuple[GradientSet, float]:
    """
    Mean gradient over the batch and the summed loss.

    With ``workers > 1`` the batch is split into contiguous chunks handled by a
    thread pool; chunk gradients are combined by `tree_reduce` in chunk order.
    """
    backprop = backprop or BackpropConfig()
    kernel_tau = kernel_tau or net.neuron.tau_s
    batch = inputs.shape[0]
    chunks = [
        torch.from_numpy(c) for c in np.array_split(np.arange(batch), min(workers, batch))
    ]

    def run(idx):
        return _chunk_gradients(net, inputs[idx], target_psc[idx], backprop, kernel_tau)

    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))

    grads = tree_reduce([g for g, _ in results]).scale(1.0 / batch)
    bad = grads.first_non_finite()
    if bad is not None:
        raise NonFiniteError("non-finite gradient", layer=bad)
    loss = 0.0
    for _, chunk_loss in results:
        loss += chunk_loss
    return grads, loss


def _manifest_entry(config, net, digest, train_set, test_set) -> dict:
    return {
        "config": config.to_dict(),
        "digest": digest,
        "input_shape": [int(s) for s in net.input_shape],
        "version": __version__,
        "subset": {
            "train": train_set.indices,
            "test": test_set.indices,
        },
    }


def _init_wandb(config: RunConfig):
    import wandb

    _set_wandb_vars(config)
    return wandb.init(name=config.resolved_run_name, config=config.to_dict())


def train(config: RunConfig) -> TrainResult:
    """
    Train the network described by `config`.

    Writes ``results/<run>_<dataset>-training.csv`` (one row per epoch),
    ``checkpoints/<run>/epoch-NNN.ckpt`` (epoch 0 is the initialization) and
    the run's entry in the task manifest.
    """
    config.validate()
    _set_serial_mode(config)
    workers = 1 if config.serial else config.workers
    task_path = prepare_task_dir(config)
    run_name = config.resolved_run_name

    train_set, test_set = load_datasets(config)
    net = build_run_network(config)
    init_weights(net, config.seed, scale=config.init_scale)
    digest = config.digest(net.input_shape)
    target: TargetSpec = config.target_spec(net.output_size, train_set.n_classes)
    kernel_tau = config.resolved_kernel_tau
    backprop = config.backprop_config
    optim = OptimState.for_network(
        net,
        kind=config.optimizer,
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )

    record_run(task_path, run_name, _manifest_entry(config, net, digest, train_set, test_set))
    ckpt_dir = task_path / "checkpoints" / run_name
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = ckpt_dir / "epoch-000.ckpt"
    save_checkpoint(net, digest, checkpoint)

    metrics_path = (
        task_path / "results" / f"{run_name}_{config.resolved_dataset_name}-training.csv"
    )
    pd.DataFrame(columns=METRIC_COLUMNS).to_csv(metrics_path, index=False)

    run = _init_wandb(config) if config.report_to == "wandb" else None

    from ..evaluation.eval_run import evaluate_network

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        batches = make_batches(train_set, config.batch_size, config.seed, epoch)
        total_loss = 0.0
        stream = prefetch(train_set, batches, config.n_steps, net.input_shape)
        for inputs, labels in tqdm(
            stream, total=len(batches), desc=f"Epoch {epoch}/{config.epochs}", leave=False
        ):
            target_psc = psc_filter(encode_targets(labels, target), kernel_tau)
            grads, loss = batch_gradients(
                net, inputs, target_psc, backprop, kernel_tau, workers=workers
            )
            optimizer_step(optim, grads, net)
            total_loss += loss

        test = evaluate_network(
            net, test_set, readout=config.readout, batch_size=config.batch_size
        )
        row = {
            "epoch": epoch,
            "train_loss": total_loss / len(train_set),
            "test_acc": test.accuracy,
            "wall_ms": (time.perf_counter() - start) * 1000.0,
        }
        pd.DataFrame([row], columns=METRIC_COLUMNS).to_csv(
            metrics_path, mode="a", header=False, index=False
        )
        checkpoint = ckpt_dir / f"epoch-{epoch:03d}.ckpt"
        save_checkpoint(net, digest, checkpoint)
        logger.info(
            "epoch %d: train loss %.4f, test accuracy %.4f",
            epoch,
            row["train_loss"],
            row["test_acc"],
        )
        if run is not None:
            run.log(row)

    if run is not None:
        run.finish()

    return TrainResult(
        net=net,
        metrics=pd.read_csv(metrics_path),
        checkpoint=str(checkpoint),
        metrics_path=str(metrics_path),
        digest=digest,
        run_name=run_name,
    )
