import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from typing import Optional

from ...errors import ConfigurationError
from ...snn.backprop import BackpropConfig
from ...snn.loss import TargetSpec
from ...snn.neuron import NeuronConfig
from ...utils.config import BaseTaskConfig, read_config_file

__all__ = ["RunConfig", "CONFIG_SECTIONS"]

CONFIG_SECTIONS = {
    "network": ("architecture", "input_shape", "n_steps", "bias_current", "init_scale"),
    "neuron": ("tau_m", "tau_s", "v_th"),
    "target": ("n_classes", "kernel_tau", "pattern", "readout"),
    "data": (
        "dataset",
        "dataset_name",
        "data_dir",
        "train_images",
        "train_labels",
        "test_images",
        "test_labels",
        "train_events",
        "test_events",
        "cifar_train",
        "cifar_test",
        "window",
        "sensor_shape",
        "n_train",
        "n_test",
        "synthetic_samples",
        "synthetic_rate",
    ),
    "train": (
        "epochs",
        "batch_size",
        "seed",
        "serial",
        "workers",
        "run_name",
        "report_to",
        "wandb_project",
        "wandb_run_group",
        "wandb_job_type",
        "output_dir",
    ),
    "optimizer": ("optimizer", "learning_rate", "beta1", "beta2", "eps"),
    "backprop": ("slope_eps", "dead_kappa", "psc_convention"),
}

DATASET_KINDS = ("synthetic", "idx", "events", "cifar")

# fields that define the network the weights belong to
_DIGEST_FIELDS = ("architecture", "n_steps", "tau_m", "tau_s", "v_th", "bias_current")


@dataclass(kw_only=True)
class RunConfig(BaseTaskConfig):
    """Task: Training

    Train a spiking network with error backpropagation through firing times.

    Parameters
    ----------
    architecture : str
        Layer string, e.g. ``"784-400-10"`` or ``"28x28-15C5-P2-40C5-P2-300-10"``.
        Without `input_shape` the first token names the input.
    input_shape : list of int, optional
        Per-sample input shape; inferred from the architecture or the data.
    n_steps : int, default=5
        Simulation window length.
    bias_current : float, default=0.0
        Constant current added to every spiking neuron.
    init_scale : float, default=3.0
        Weights start uniform in ``+-init_scale * v_th / sqrt(fan_in)``.
    tau_m, tau_s, v_th : float, default=5.0, 3.0, 1.0
        LIF constants.
    n_classes : int, optional
        Number of classes; defaults to the dataset's.
    kernel_tau : float, optional
        Loss-kernel time constant; defaults to `tau_s`.
    pattern : list, optional
        Desired output raster per class, ``[class][neuron][step]``. Defaults
        to the class's neuron firing at every step.
    readout : {"psc", "count"}, default="psc"
        Classification readout.
    dataset : {"synthetic", "idx", "events", "cifar"}, default="synthetic"
    dataset_name : str, optional
        Name used in results file names; defaults to `dataset`.
    data_dir : str, optional
        Directory holding the dataset in its standard layout. Explicit file
        paths below take precedence.
    train_images, train_labels, test_images, test_labels : str, optional
        IDX files.
    train_events, test_events : str, optional
        Event directories laid out as ``<root>/<label>/*``.
    cifar_train : list of str, optional
    cifar_test : str, optional
        CIFAR-10 binary batches.
    window : float, default=300000.0
        Event window in microseconds.
    sensor_shape : list of int, default=[34, 34]
        Event sensor height and width.
    n_train, n_test : int, optional
        Subset sizes, first-N after a seeded shuffle.
    synthetic_samples : int, default=8
    synthetic_rate : float, default=0.3
        Size and spike probability of the synthetic dataset.
    epochs : int, default=1
    batch_size : int, default=32
    seed : int, default=0
    serial : bool, default=True
        Single worker, single torch thread, deterministic algorithms.
    workers : int, default=1
        Threads sharing each batch when not serial.
    run_name : str, optional
        Defaults to ``<architecture>-seed<seed>``.
    report_to : {"none", "wandb"}, default="none"
    wandb_project, wandb_run_group, wandb_job_type : str, optional
    optimizer : {"adam", "sgd"}, default="adam"
    learning_rate : float, default=5e-4
    beta1, beta2, eps : float, default=0.9, 0.999, 1e-8
    slope_eps : float, optional
        Clamp on du/dt at firing steps; defaults to ``0.1 * v_th / tau_m``.
    dead_kappa : float, default=0.0
        Surrogate sensitivity for neurons silent over the whole window.
    psc_convention : {"onset", "emergence"}, default="emergence"
        Sign of the PSC-kernel derivative.
    output_dir : str, optional
        Task directory; set by `run_experiments`.

    Attributes
    ----------
    config_type : str, default="training"
    task_dir : str
    name : str
    runner : Callable
    """

    config_type: str = field(init=False, default="training")

    @property
    def task_dir(self):
        return "training"

    @property
    def runner(self):
        from .train_run import train

        return train

    # network
    architecture: str
    input_shape: Optional[list] = None
    n_steps: int = 5
    bias_current: float = 0.0
    init_scale: float = 3.0

    # neuron
    tau_m: float = 5.0
    tau_s: float = 3.0
    v_th: float = 1.0

    # target
    n_classes: Optional[int] = None
    kernel_tau: Optional[float] = None
    pattern: Optional[list] = None
    readout: str = "psc"

    # data
    dataset: str = "synthetic"
    dataset_name: Optional[str] = None
    data_dir: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_events: Optional[str] = None
    test_events: Optional[str] = None
    cifar_train: Optional[list] = None
    cifar_test: Optional[str] = None
    window: float = 300_000.0
    sensor_shape: list = field(default_factory=lambda: [34, 34])
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    synthetic_samples: int = 8
    synthetic_rate: float = 0.3

    # train
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    serial: bool = True
    workers: int = 1
    run_name: Optional[str] = None
    report_to: str = "none"
    wandb_project: Optional[str] = None
    wandb_run_group: Optional[str] = None
    wandb_job_type: Optional[str] = None

    # optimizer
    optimizer: str = "adam"
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    # backprop
    slope_eps: Optional[float] = None
    dead_kappa: float = 0.0
    psc_convention: str = "emergence"

    @classmethod
    def from_file(cls, path: str, **overrides) -> "RunConfig":
        """Load a sectioned config file; non-None `overrides` replace file values."""
        values = read_config_file(path, CONFIG_SECTIONS)
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls) if f.init}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "architecture" not in values:
            raise ConfigurationError(f"{path}: [network] architecture is required")
        # relative data paths are relative to the config file
        base = os.path.dirname(os.path.abspath(path))
        for key in (
            "data_dir",
            "train_images",
            "train_labels",
            "test_images",
            "test_labels",
            "train_events",
            "test_events",
            "cifar_test",
        ):
            if isinstance(values.get(key), str):
                values[key] = os.path.join(base, values[key])
        if isinstance(values.get("cifar_train"), list):
            values["cifar_train"] = [os.path.join(base, p) for p in values["cifar_train"]]
        return cls(**values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        """Rebuild from `to_dict` output, e.g. a manifest entry."""
        known = {f.name for f in fields(cls) if f.init}
        return cls(**{k: v for k, v in values.items() if k in known})

    @property
    def resolved_run_name(self) -> str:
        return self.run_name or f"{self.architecture}-seed{self.seed}"

    @property
    def resolved_dataset_name(self) -> str:
        return self.dataset_name or self.dataset

    @property
    def neuron_config(self) -> NeuronConfig:
        return NeuronConfig(tau_m=self.tau_m, tau_s=self.tau_s, v_th=self.v_th)

    @property
    def backprop_config(self) -> BackpropConfig:
        return BackpropConfig(
            slope_eps=self.slope_eps,
            dead_kappa=self.dead_kappa,
            psc_convention=self.psc_convention,
        )

    @property
    def resolved_kernel_tau(self) -> float:
        return self.kernel_tau if self.kernel_tau is not None else self.tau_s

    def target_spec(self, n_out: int, n_classes: Optional[int] = None) -> TargetSpec:
        if self.pattern is not None:
            spec = TargetSpec.from_table(self.pattern, self.resolved_kernel_tau)
            if spec.n_out != n_out or spec.n_steps != self.n_steps:
                raise ConfigurationError(
                    f"target pattern is {spec.n_classes}x{spec.n_out}x{spec.n_steps}, "
                    f"network has {n_out} outputs over {self.n_steps} steps"
                )
            return spec
        n_classes = self.n_classes or n_classes or n_out
        return TargetSpec.default(n_classes, self.n_steps, self.resolved_kernel_tau, n_out=n_out)

    def digest(self, input_shape) -> str:
        payload = {k: getattr(self, k) for k in _DIGEST_FIELDS}
        payload["input_shape"] = [int(s) for s in input_shape]
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def _required_files(self) -> list:
        if self.dataset == "idx":
            files = [self.train_images, self.train_labels, self.test_images, self.test_labels]
        elif self.dataset == "events":
            files = [self.train_events, self.test_events]
        elif self.dataset == "cifar":
            files = list(self.cifar_train or []) + [self.cifar_test]
        else:
            return []
        if self.data_dir is not None and any(f is None for f in files):
            return [self.data_dir] + [f for f in files if f is not None]
        return files

    def validate(self) -> "RunConfig":
        """Check ranges and referenced files; raises ConfigurationError."""
        checks = [
            (self.tau_m > 1, f"tau_m must be > 1, got {self.tau_m}"),
            (self.tau_s > 1, f"tau_s must be > 1, got {self.tau_s}"),
            (self.v_th > 0, f"v_th must be > 0, got {self.v_th}"),
            (self.n_steps >= 1, f"n_steps must be >= 1, got {self.n_steps}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}"),
            (self.workers >= 1, f"workers must be >= 1, got {self.workers}"),
            (self.learning_rate > 0, f"learning_rate must be > 0, got {self.learning_rate}"),
            (0 <= self.beta1 < 1, f"beta1 must lie in [0, 1), got {self.beta1}"),
            (0 <= self.beta2 < 1, f"beta2 must lie in [0, 1), got {self.beta2}"),
            (self.eps > 0, f"eps must be > 0, got {self.eps}"),
            (self.slope_eps is None or self.slope_eps > 0, "slope_eps must be > 0"),
            (self.dead_kappa >= 0, f"dead_kappa must be >= 0, got {self.dead_kappa}"),
            (self.kernel_tau is None or self.kernel_tau > 1, "kernel_tau must be > 1"),
            (self.window > 0, f"window must be > 0, got {self.window}"),
            (self.init_scale > 0, f"init_scale must be > 0, got {self.init_scale}"),
            (self.optimizer in ("adam", "sgd"), f"unknown optimizer {self.optimizer!r}"),
            (self.readout in ("psc", "count"), f"unknown readout {self.readout!r}"),
            (
                self.psc_convention in ("onset", "emergence"),
                f"unknown psc_convention {self.psc_convention!r}",
            ),
            (self.dataset in DATASET_KINDS, f"unknown dataset kind {self.dataset!r}"),
            (self.report_to in ("none", "wandb"), f"unknown report_to {self.report_to!r}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)

        files = self._required_files()
        if any(f is None for f in files):
            raise ConfigurationError(
                f"dataset {self.dataset!r} needs data_dir or explicit file paths"
            )
        for f in files:
            if not os.path.exists(f):
                raise ConfigurationError(f"referenced file {f} does not exist")
        return self
