from dataclasses import dataclass, field
from typing import Callable, Optional

from ...utils.config import BaseTaskConfig

__all__ = ["SparsityConfig"]


@dataclass(kw_only=True)
class SparsityConfig(BaseTaskConfig):
    """Task: Sparsity

    Count how often each spiking neuron fires during inference.

    Parameters
    ----------
    checkpoint : str
        Path to a checkpoint written by the training task.
    data_dir : str, optional
        Dataset directory; defaults to the training run's test data.
    run_config : str, optional
        Run config file the checkpoint was trained with. When omitted, the
        config is read from the training task's manifest.
    split : {"train", "test"}, default="test"
    n_samples : int, default=100
        Number of samples (first in stored order) to average over.
    batch_size : int, default=64
    run_name : str, optional
    dataset_name : str, optional
    output_dir : str, optional
        Directory where sparsity results will be saved.

    Attributes
    ----------
    config_type : str, default="sparsity"
    task_dir : str
    name : str
    runner : Callable
    """

    config_type: str = field(init=False, default="sparsity")

    @property
    def task_dir(self) -> str:
        return "sparsity"

    @property
    def runner(self) -> Callable:
        from .sparsity_run import run_sparsity

        return run_sparsity

    checkpoint: str
    data_dir: Optional[str] = None
    run_config: Optional[str] = None
    split: str = "test"
    n_samples: int = 100
    batch_size: int = 64
    run_name: Optional[str] = None
    dataset_name: Optional[str] = None
