from dataclasses import dataclass, field
from typing import Callable

from ...utils.config import BaseTaskConfig

__all__ = ["GradcheckConfig", "GRADCHECK_CASES"]

GRADCHECK_CASES = ("all", "phi", "shift", "loss")


@dataclass(kw_only=True)
class GradcheckConfig(BaseTaskConfig):
    """Task: Gradient check

    Verify the backward-pass mathematics against independent oracles.

    Parameters
    ----------
    case : {"all", "phi", "shift", "loss"}, default="all"
        ``phi`` compares the dependency tables with a direct re-evaluation,
        ``shift`` compares predicted firing-time shifts with a fine-step
        simulation, ``loss`` compares the loss gradient with central
        differences.
    n_instances : int, default=1000
        Random rasters for the ``phi`` check.
    n_circuits : int, default=20
        Random steep-slope circuits for the ``shift`` check.
    n_traces : int, default=10
        Random output traces for the ``loss`` check.
    seed : int, default=0
    delta_w : float, default=1e-3
        Weight perturbation of the ``shift`` check.
    subdivision : int, default=100
        Fine steps per time step of the ``shift`` simulation.
    psc_convention : {"onset", "emergence"}, default="onset"
        Sign convention of the tables compared by the ``phi`` check.
    phi_tolerance : float, default=1e-12
    shift_tolerance : float, default=0.3
        Bound on the median relative error over circuits.
    loss_tolerance : float, default=1e-5
    output_dir : str, optional
        Directory where the report will be saved.

    Attributes
    ----------
    config_type : str, default="gradcheck"
    task_dir : str
    name : str
    runner : Callable
    """

    config_type: str = field(init=False, default="gradcheck")

    @property
    def task_dir(self) -> str:
        return "gradcheck"

    @property
    def runner(self) -> Callable:
        from .gradcheck_run import run_gradcheck

        return run_gradcheck

    case: str = "all"
    n_instances: int = 1000
    n_circuits: int = 20
    n_traces: int = 10
    seed: int = 0
    delta_w: float = 1e-3
    subdivision: int = 100
    psc_convention: str = "onset"
    phi_tolerance: float = 1e-12
    shift_tolerance: float = 0.3
    loss_tolerance: float = 1e-5
