from dataclasses import dataclass
from typing import Optional, Sequence, Union

import torch

from ..errors import ConfigurationError, ContractViolation
from .neuron import SpikeRecord, psc_filter

__all__ = [
    "TargetSpec",
    "LossReport",
    "encode_target",
    "encode_targets",
    "van_rossum_loss",
    "loss_gradient",
    "classify",
]


@dataclass
class TargetSpec:
    """
    Desired output rasters, one per class.

    Parameters
    ----------
    pattern : torch.Tensor
        Binary ``[n_classes, n_out, n_steps]`` tensor.
    kernel_tau : float
        Time constant of the loss kernel.
    """

    pattern: torch.Tensor
    kernel_tau: float

    def __post_init__(self):
        self.pattern = torch.as_tensor(self.pattern, dtype=torch.float64)
        if self.pattern.dim() != 3:
            raise ConfigurationError(
                "target pattern must be [n_classes, n_out, n_steps], "
                f"got {list(self.pattern.shape)}"
            )
        if not bool(((self.pattern == 0) | (self.pattern == 1)).all()):
            raise ConfigurationError("target pattern entries must be 0 or 1")
        if not self.kernel_tau > 1:
            raise ConfigurationError(f"kernel_tau must be > 1, got {self.kernel_tau}")

    @property
    def n_classes(self) -> int:
        return self.pattern.shape[0]

    @property
    def n_out(self) -> int:
        return self.pattern.shape[1]

    @property
    def n_steps(self) -> int:
        return self.pattern.shape[2]

    @classmethod
    def default(
        cls,
        n_classes: int,
        n_steps: int,
        kernel_tau: float,
        n_out: Optional[int] = None,
    ) -> "TargetSpec":
        """The class's own output neuron fires at every step, all others stay silent."""
        n_out = n_classes if n_out is None else n_out
        if n_out < n_classes:
            raise ConfigurationError(
                f"{n_classes} classes need at least {n_classes} output neurons"
            )
        pattern = torch.zeros(n_classes, n_out, n_steps, dtype=torch.float64)
        for c in range(n_classes):
            pattern[c, c, :] = 1.0
        return cls(pattern=pattern, kernel_tau=kernel_tau)

    @classmethod
    def from_table(cls, table: Sequence, kernel_tau: float) -> "TargetSpec":
        """Build from nested lists ``[class][neuron][step]`` as stored in run configs."""
        try:
            pattern = torch.tensor(table, dtype=torch.float64)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"target pattern table is not rectangular: {e}")
        return cls(pattern=pattern, kernel_tau=kernel_tau)

    def to_table(self) -> list:
        return self.pattern.to(torch.int64).tolist()


@dataclass
class LossReport:
    """
    Van Rossum loss of one or more samples.

    ``per_step`` is ``[..., n_steps]`` and ``per_neuron`` is ``[..., n_out]``;
    leading axes are batch axes. ``total`` sums ``per_step`` over time.
    """

    total: torch.Tensor
    per_step: torch.Tensor
    per_neuron: torch.Tensor

    @classmethod
    def from_filtered(
        cls, actual_psc: torch.Tensor, desired_psc: torch.Tensor
    ) -> "LossReport":
        diff = desired_psc - actual_psc
        sq = 0.5 * diff * diff
        per_step = sq.sum(dim=-2)
        return cls(total=per_step.sum(dim=-1), per_step=per_step, per_neuron=sq.sum(dim=-1))

    def mean(self) -> float:
        return float(self.total.mean())

    def sum(self) -> float:
        return float(self.total.sum())


def encode_target(label: int, spec: TargetSpec) -> torch.Tensor:
    """Desired ``[n_out, n_steps]`` raster for `label`."""
    if not 0 <= int(label) < spec.n_classes:
        raise ConfigurationError(f"label {label} outside 0..{spec.n_classes - 1}")
    return spec.pattern[int(label)].clone()


def encode_targets(labels: Union[Sequence[int], torch.Tensor], spec: TargetSpec) -> torch.Tensor:
    """Batched `encode_target`: ``[batch, n_out, n_steps]``."""
    labels = torch.as_tensor(labels, dtype=torch.long).flatten()
    if labels.numel() and (labels.min() < 0 or labels.max() >= spec.n_classes):
        raise ConfigurationError(f"labels outside 0..{spec.n_classes - 1}")
    return spec.pattern[labels].clone()


def _raster(x: Union[SpikeRecord, torch.Tensor]) -> torch.Tensor:
    return x.raster if isinstance(x, SpikeRecord) else torch.as_tensor(x)


def van_rossum_loss(
    actual: Union[SpikeRecord, torch.Tensor],
    desired: Union[SpikeRecord, torch.Tensor],
    kernel_tau: float,
) -> LossReport:
    """
    Squared distance between kernel-filtered rasters.

    ``E[t] = 0.5 * sum_neurons ((eps*d)[t] - (eps*s)[t])**2`` and ``L = sum_t E[t]``.
    Rasters are ``[..., n_out, n_steps]``.
    """
    s, d = _raster(actual), _raster(desired)
    if s.shape != d.shape:
        raise ContractViolation(
            f"actual {list(s.shape)} and desired {list(d.shape)} rasters differ in shape"
        )
    if s.dim() < 2:
        raise ContractViolation("rasters must be at least [n_out, n_steps]")
    s = s.to(torch.float64)
    d = d.to(torch.float64)
    return LossReport.from_filtered(psc_filter(s, kernel_tau), psc_filter(d, kernel_tau))


def loss_gradient(actual_psc: torch.Tensor, desired_psc: torch.Tensor) -> torch.Tensor:
    """dE[t_k] / d(eps*s)[t_k] = (eps*s)[t_k] - (eps*d)[t_k]."""
    if actual_psc.shape != desired_psc.shape:
        raise ContractViolation("actual and desired PSC differ in shape")
    return actual_psc - desired_psc


def classify(output: torch.Tensor, readout: str = "psc") -> Union[int, torch.Tensor]:
    """
    Predicted class from ``[..., n_out, n_steps]`` output.

    With ``readout="psc"`` the output is a PSC series and neurons are ranked
    by summed PSC; with ``"count"`` it is a raster ranked by spike count. Ties
    go to the lowest index. A single ``[n_out, n_steps]`` sample gives an int.
    """
    if readout not in ("psc", "count"):
        raise ConfigurationError(f"unknown readout {readout!r}")
    if output.dim() < 2 or output.shape[-2] < 1:
        raise ContractViolation("classify needs at least one output neuron")
    score = output.sum(dim=-1)
    # first maximal index, independent of torch's argmax tie behavior
    is_max = score == score.max(dim=-1, keepdim=True).values
    idx = torch.arange(score.shape[-1]).expand_as(score)
    winner = torch.where(is_max, idx, score.shape[-1]).min(dim=-1).values
    if winner.dim() == 0:
        return int(winner)
    return winner
