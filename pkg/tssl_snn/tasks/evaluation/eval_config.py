from dataclasses import dataclass, field
from typing import Callable, Optional

from ...utils.config import BaseTaskConfig

__all__ = ["EvalConfig"]


@dataclass(kw_only=True)
class EvalConfig(BaseTaskConfig):
    """Task: Evaluation

    Classify a dataset with a trained checkpoint and report accuracy and loss.

    Parameters
    ----------
    checkpoint : str
        Path to a checkpoint written by the training task.
    data_dir : str, optional
        Dataset directory (IDX, CIFAR-10 batches or event folders). Defaults
        to the training run's test data.
    run_config : str, optional
        Run config file the checkpoint was trained with. When omitted, the
        config is read from the training task's manifest.
    split : {"train", "test"}, default="test"
        Which split of `data_dir` to evaluate.
    n_samples : int, optional
        Evaluate only the first `n_samples` samples.
    batch_size : int, default=64
        Samples per forward pass.
    readout : {"psc", "count"}, optional
        Defaults to the run config's readout.
    run_name : str, optional
        Name used in results file names; defaults to the checkpoint's run.
    dataset_name : str, optional
        Name used in results file names; defaults to the data directory name.
    output_dir : str, optional
        Directory where evaluation results will be saved.

    Attributes
    ----------
    config_type : str, default="evaluation"
    task_dir : str
    name : str
    runner : Callable
    """

    config_type: str = field(init=False, default="evaluation")

    @property
    def task_dir(self) -> str:
        return "evaluation"

    @property
    def runner(self) -> Callable:
        from .eval_run import run_evaluation

        return run_evaluation

    checkpoint: str
    data_dir: Optional[str] = None
    run_config: Optional[str] = None
    split: str = "test"
    n_samples: Optional[int] = None
    batch_size: int = 64
    readout: Optional[str] = None
    run_name: Optional[str] = None
    dataset_name: Optional[str] = None
