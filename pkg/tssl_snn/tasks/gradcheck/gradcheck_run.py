import logging
import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import torch
from tqdm.auto import tqdm

from ...errors import ConfigurationError
from ...snn.backprop import BackpropConfig, build_phi
from ...snn.oracle import (
    graze_circuit,
    loss_fd_check,
    loss_fd_convergence,
    phi_direct,
    random_phi_instance,
    spike_shift_check,
    steep_circuit,
)
from ...utils.directories import prepare_task_dir
from .gradcheck_config import GRADCHECK_CASES, GradcheckConfig

__all__ = [
    "CheckResult",
    "GradcheckReport",
    "check_phi",
    "check_shift",
    "check_loss",
    "run_gradcheck",
]

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: Optional[float]
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bound = "" if self.bound is None else f" (bound {self.bound:g})"
        return f"{self.name:<12} {status}  {self.value:.3e}{bound}  {self.detail}".rstrip()


@dataclass
class GradcheckReport:
    seed: int
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_text(self) -> str:
        lines = [f"gradcheck seed={self.seed}"]
        lines += [c.line() for c in self.checks]
        lines.append(f"{'overall':<12} {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"check": c.name, "passed": c.passed, "value": c.value} for c in self.checks]
        )


def _table_error(fast: torch.Tensor, direct: torch.Tensor) -> float:
    if fast.numel() == 0:
        return 0.0
    scale = torch.maximum(fast.abs().max(), direct.abs().max()).clamp(min=1e-300)
    return float((fast - direct).abs().max() / scale)


def check_phi(
    n_instances: int = 1000,
    seed: int = 0,
    backprop: Optional[BackpropConfig] = None,
    tolerance: float = 1e-12,
) -> CheckResult:
    """Largest relative difference between `build_phi` and `phi_direct`."""
    backprop = backprop or BackpropConfig()
    rng = random.Random(seed)
    worst = 0.0
    for _ in tqdm(range(n_instances), desc="phi tables", leave=False):
        trace, spikes, cfg = random_phi_instance(rng)
        fast = build_phi(trace, spikes, cfg, trace.n_steps, backprop).values
        direct = phi_direct(spikes, trace, cfg, backprop).values
        worst = max(worst, _table_error(fast, direct))
    return CheckResult(
        "phi", worst <= tolerance, worst, tolerance, f"max relative error, {n_instances} rasters"
    )


def check_shift(
    n_circuits: int = 20,
    seed: int = 0,
    delta_w: float = 1e-3,
    subdivision: int = 100,
    tolerance: float = 0.3,
) -> list[CheckResult]:
    """
    Median firing-time shift error over steep circuits, and the slope clamp
    on a circuit that only grazes threshold.
    """
    rng = random.Random(seed)
    results = [
        spike_shift_check(steep_circuit(rng, delta_w=delta_w, subdivision=subdivision))
        for _ in tqdm(range(n_circuits), desc="shift circuits", leave=False)
    ]
    errors = [r.relative_error for r in results if r.valid]
    invalid = len(results) - len(errors)
    for r in results:
        if not r.valid:
            logger.info("shift experiment skipped: %s", r.reason)
    median = float(np.median(errors)) if errors else float("nan")
    steep = CheckResult(
        "shift",
        bool(errors) and median <= tolerance,
        median,
        tolerance,
        f"median relative error, {len(errors)} circuits ({invalid} invalid)",
    )

    graze = spike_shift_check(graze_circuit(delta_w=delta_w, subdivision=subdivision))
    clamp = CheckResult(
        "graze",
        graze.valid and graze.clamped,
        graze.predicted,
        None,
        "predicted shift, slope clamp engaged" if graze.clamped else "slope clamp not engaged",
    )
    return [steep, clamp]


def check_loss(
    n_traces: int = 10,
    seed: int = 0,
    tolerance: float = 1e-5,
    n_out: int = 3,
    n_steps: int = 5,
    kernel_tau: float = 3.0,
) -> list[CheckResult]:
    """Central differences of the loss on random traces, and their order in h."""
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    envelope_ok = True
    for _ in range(n_traces):
        output = 2.0 * torch.rand((n_out, n_steps), generator=gen, dtype=torch.float64)
        target = (torch.rand((n_out, n_steps), generator=gen, dtype=torch.float64) < 0.5).to(
            torch.float64
        )
        worst = max(worst, loss_fd_check(output, target, kernel_tau).max_relative_error)
        study = loss_fd_convergence(output, target, kernel_tau)
        envelope_ok &= bool((study["max_relative_error"] <= study["envelope"]).all())
    return [
        CheckResult(
            "loss", worst <= tolerance, worst, tolerance, f"max relative error, {n_traces} traces"
        ),
        CheckResult(
            "loss-order",
            envelope_ok,
            worst,
            None,
            "errors within the h**2 envelope" if envelope_ok else "errors exceed the h**2 envelope",
        ),
    ]


def run_gradcheck(config: GradcheckConfig) -> GradcheckReport:
    """Run the selected checks and write ``gradcheck-report.txt``."""
    if config.case not in GRADCHECK_CASES:
        raise ConfigurationError(
            f"unknown case {config.case!r} (expected one of {', '.join(GRADCHECK_CASES)})"
        )
    report = GradcheckReport(seed=config.seed)
    if config.case in ("all", "phi"):
        backprop = BackpropConfig(psc_convention=config.psc_convention)
        report.checks.append(
            check_phi(config.n_instances, config.seed, backprop, config.phi_tolerance)
        )
    if config.case in ("all", "shift"):
        report.checks += check_shift(
            config.n_circuits,
            config.seed,
            config.delta_w,
            config.subdivision,
            config.shift_tolerance,
        )
    if config.case in ("all", "loss"):
        report.checks += check_loss(config.n_traces, config.seed, config.loss_tolerance)

    task_path = prepare_task_dir(config)
    with open(task_path / "gradcheck-report.txt", "w") as f:
        f.write(report.to_text())
    row = {c.name: c.value for c in report.checks}
    pd.DataFrame([row]).to_csv(
        task_path / "results" / f"seed{config.seed}_{config.case}-gradcheck.csv", index=False
    )
    logger.info("gradcheck %s", "passed" if report.passed else "FAILED")
    return report
