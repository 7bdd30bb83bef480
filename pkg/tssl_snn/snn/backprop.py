"""Error backpropagation through presynaptic firing times.

For every spiking neuron the backward pass needs

    phi(t_k, t_m) = d a[t_k] / d u[t_m],      t_m <= t_k,

which is non-zero only at firing steps t_m. It has two parts:

* inter-neuron: the shift of the firing time t_m moves the onset of the PSC
  kernel, ``dpsc_dtm(t_k, t_m) * dt_m/du[t_m]`` with
  ``dt_m/du = -1 / (du/dt at t_m)``;
* intra-neuron: the shift of t_m also moves the reset applied before the next
  firing step t_p, which feeds back through ``phi(t_k, t_p)`` for t_k > t_p.

Columns are filled from the last step backwards so ``phi(., t_p)`` is ready
when t_m < t_p needs it. The layer errors then follow

    delta_out[t_m]  = sum_{k>=m} (a[t_k] - a_target[t_k]) * phi(t_k, t_m)
    delta_l[t_m]    = sum_{k>=m} phi(t_k, t_m) * (W_{l+1}^T delta_{l+1})[t_k]
    dL/dW_l         = sum_m delta_l[t_m] (x) a_{l-1}[t_m]
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import torch

from ..errors import ContractViolation
from .layers import LayerParams
from .neuron import NeuronConfig, NeuronTrace, SpikeRecord, fire

__all__ = [
    "PHI_DENSE_MAX_STEPS",
    "BackpropConfig",
    "PhiTable",
    "DeltaTrace",
    "GradientSet",
    "membrane_slope",
    "du_dt_at_spike",
    "dpsc_dtm",
    "dreset_dtm",
    "psc_shift_kernel",
    "build_phi",
    "delta_output",
    "delta_hidden",
    "weight_grad",
]

logger = logging.getLogger(__name__)

PHI_DENSE_MAX_STEPS = 64

PscConvention = Literal["onset", "emergence"]


@dataclass(frozen=True)
class BackpropConfig:
    """Knobs of the backward pass.

    Parameters
    ----------
    slope_eps : float, optional
        Lower clamp on du/dt at a firing step. Defaults to ``0.1 * v_th / tau_m``.
    dead_kappa : float, default=0.0
        Gain of the surrogate sensitivity given to neurons that never fire in
        the window. 0 disables it.
    psc_convention : {"onset", "emergence"}, default="onset"
        Sign of the PSC-kernel derivative. "onset": a later onset leaves less
        decay at t_k (positive derivative). "emergence": an earlier crossing
        adds PSC (negated derivative). The reset-kernel term is unaffected.
    phi_storage : {"auto", "dense", "sparse"}, default="auto"
        "auto" stores phi densely up to `PHI_DENSE_MAX_STEPS` steps and as
        per-column firing rows beyond.
    """

    slope_eps: Optional[float] = None
    dead_kappa: float = 0.0
    psc_convention: PscConvention = "onset"
    phi_storage: Literal["auto", "dense", "sparse"] = "auto"

    def __post_init__(self):
        if self.slope_eps is not None and not self.slope_eps > 0:
            raise ContractViolation(f"slope_eps must be > 0, got {self.slope_eps}")
        if self.dead_kappa < 0:
            raise ContractViolation(f"dead_kappa must be >= 0, got {self.dead_kappa}")
        if self.psc_convention not in ("onset", "emergence"):
            raise ContractViolation(f"unknown psc_convention {self.psc_convention!r}")

    def resolve_slope_eps(self, cfg: NeuronConfig) -> float:
        if self.slope_eps is not None:
            return self.slope_eps
        return 0.1 * cfg.v_th / cfg.tau_m


class PhiTable:
    """phi(t_k, t_m) for a block of neurons.

    Neurons are addressed by their flat index over ``neuron_shape`` (batch axes
    included). Dense storage is ``[n_neurons, t_k, t_m]``; sparse storage keeps,
    per column t_m, only the rows of neurons that have a non-zero column.
    """

    def __init__(
        self,
        neuron_shape: Sequence[int],
        n_steps: int,
        dtype: torch.dtype = torch.float64,
        sparse: Optional[bool] = None,
    ):
        self.neuron_shape = tuple(neuron_shape)
        self.n_steps = n_steps
        self.n_neurons = math.prod(self.neuron_shape)
        self.dtype = dtype
        self.sparse = n_steps > PHI_DENSE_MAX_STEPS if sparse is None else sparse
        self._dense: Optional[torch.Tensor] = None
        self._columns: dict[int, list[tuple[torch.Tensor, torch.Tensor]]] = {}
        if not self.sparse:
            self._dense = torch.zeros(
                self.n_neurons, n_steps, n_steps, dtype=dtype
            )

    @classmethod
    def from_dense(cls, values: torch.Tensor) -> "PhiTable":
        """Wrap ``[*neuron_shape, t_k, t_m]`` values."""
        n_steps = values.shape[-1]
        table = cls(values.shape[:-2], n_steps, dtype=values.dtype, sparse=False)
        table._dense = values.reshape(-1, n_steps, n_steps).clone()
        return table

    def rows(self, t_m: int, rows: torch.Tensor) -> torch.Tensor:
        """Column t_m restricted to ``rows``; shape ``[len(rows), n_steps]``."""
        if not self.sparse:
            return self._dense[rows, :, t_m]
        out = torch.zeros(rows.numel(), self.n_steps, dtype=self.dtype)
        for stored_rows, values in self._columns.get(t_m, []):
            # stored rows are kept sorted
            pos = torch.searchsorted(stored_rows, rows).clamp(max=stored_rows.numel() - 1)
            hit = stored_rows[pos] == rows
            out[hit] = values[pos[hit]]
        return out

    def set_column(self, t_m: int, rows: torch.Tensor, values: torch.Tensor):
        if not self.sparse:
            self._dense[rows, :, t_m] = values
        else:
            rows, order = torch.as_tensor(rows).sort()
            self._columns.setdefault(t_m, []).append((rows, values[order]))

    def contract(self, grad: torch.Tensor) -> torch.Tensor:
        """``out[n, m] = sum_k phi_n(t_k, t_m) * grad[n, k]``."""
        g = grad.reshape(self.n_neurons, self.n_steps)
        if not self.sparse:
            out = torch.einsum("nkm,nk->nm", self._dense, g)
        else:
            out = torch.zeros_like(g)
            for t_m in sorted(self._columns):
                for rows, values in self._columns[t_m]:
                    out[rows, t_m] += (values * g[rows]).sum(dim=-1)
        return out.reshape(*self.neuron_shape, self.n_steps)

    @property
    def values(self) -> torch.Tensor:
        """Dense ``[*neuron_shape, t_k, t_m]`` view of the table."""
        if self.sparse:
            dense = torch.zeros(
                self.n_neurons, self.n_steps, self.n_steps, dtype=self.dtype
            )
            for t_m in sorted(self._columns):
                for rows, values in self._columns[t_m]:
                    dense[rows, :, t_m] = values
        else:
            dense = self._dense
        return dense.reshape(*self.neuron_shape, self.n_steps, self.n_steps)


@dataclass
class DeltaTrace:
    delta: torch.Tensor

    @property
    def n_steps(self) -> int:
        return self.delta.shape[-1]


@dataclass
class GradientSet:
    """One entry per network layer; None for layers without weights."""

    grads: list

    def __len__(self):
        return len(self.grads)

    def __iter__(self):
        return iter(self.grads)

    def __getitem__(self, idx):
        return self.grads[idx]

    def __add__(self, other: "GradientSet") -> "GradientSet":
        if len(self) != len(other):
            raise ContractViolation("gradient sets of different depth")
        return GradientSet(
            [None if a is None else a + b for a, b in zip(self.grads, other.grads)]
        )

    def scale(self, factor: float) -> "GradientSet":
        return GradientSet([None if g is None else g * factor for g in self.grads])

    def first_non_finite(self) -> Optional[int]:
        for idx, g in enumerate(self.grads):
            if g is not None and not torch.isfinite(g).all():
                return idx
        return None


def membrane_slope(
    u: torch.Tensor, i_net: torch.Tensor, cfg: NeuronConfig, slope_eps: float
) -> torch.Tensor:
    """Continuous-model du/dt, ``(-u + i_net) / tau_m``, clamped below at slope_eps."""
    return torch.clamp((-u + i_net) / cfg.tau_m, min=slope_eps)


def du_dt_at_spike(
    trace: NeuronTrace,
    t_m: int,
    cfg: NeuronConfig,
    slope_eps: Optional[float] = None,
) -> torch.Tensor:
    """du/dt at firing step t_m for every neuron of `trace`."""
    if not 0 <= t_m < trace.n_steps:
        raise ContractViolation(f"step {t_m} outside a {trace.n_steps}-step trace")
    u = trace.u[..., t_m]
    if not bool(fire(u, cfg).all()):
        raise ContractViolation(f"du_dt_at_spike called at step {t_m} without a spike")
    eps = slope_eps if slope_eps is not None else BackpropConfig().resolve_slope_eps(cfg)
    return membrane_slope(u, trace.i_net[..., t_m], cfg, eps)


def dpsc_dtm(
    t_k: int, t_m: int, cfg: NeuronConfig, convention: PscConvention = "onset"
) -> float:
    """d a[t_k] / d t_m of the exponential PSC kernel started at t_m."""
    if t_k < t_m:
        return 0.0
    value = math.exp(-(t_k - t_m) / cfg.tau_s) / cfg.tau_s
    return value if convention == "onset" else -value


def dreset_dtm(t_p: int, t_m: int, cfg: NeuronConfig) -> float:
    """d (nu * s)[t_p] / d t_m of the leak-decaying reset started at t_m."""
    return -(cfg.v_th / cfg.tau_m) * math.exp(-(t_p - t_m) / cfg.tau_m)


def psc_shift_kernel(
    n_steps: int, cfg: NeuronConfig, convention: PscConvention = "onset"
) -> torch.Tensor:
    """``[t_k, t_m]`` matrix of `dpsc_dtm`, zero above the diagonal."""
    return torch.tensor(
        [[dpsc_dtm(k, m, cfg, convention) for m in range(n_steps)] for k in range(n_steps)],
        dtype=torch.float64,
    )


def _next_spike_steps(raster: torch.Tensor) -> torch.Tensor:
    # out[n, m] = first p > m with a spike, n_steps if none
    n_steps = raster.shape[-1]
    out = torch.empty(raster.shape, dtype=torch.long)
    nxt = torch.full(raster.shape[:-1], n_steps, dtype=torch.long)
    for m in reversed(range(n_steps)):
        out[..., m] = nxt
        nxt = torch.where(raster[..., m] > 0, torch.full_like(nxt, m), nxt)
    return out


def build_phi(
    trace: NeuronTrace,
    spikes: SpikeRecord,
    cfg: NeuronConfig,
    n_steps: int,
    backprop: Optional[BackpropConfig] = None,
) -> PhiTable:
    backprop = backprop or BackpropConfig()
    if trace.n_steps != n_steps or tuple(spikes.raster.shape) != tuple(trace.u.shape):
        raise ContractViolation(
            f"trace {list(trace.u.shape)} and spikes {list(spikes.raster.shape)} "
            f"do not describe the same {n_steps}-step forward pass"
        )

    neuron_shape = trace.u.shape[:-1]
    s = spikes.raster.reshape(-1, n_steps)
    u = trace.u.reshape(-1, n_steps)
    i_net = trace.i_net.reshape(-1, n_steps)

    eps = backprop.resolve_slope_eps(cfg)
    slope = membrane_slope(u, i_net, cfg, eps)
    dt_du = -1.0 / slope
    if logger.isEnabledFor(logging.DEBUG):
        clamped = int((((-u + i_net) / cfg.tau_m < eps) & (s > 0)).sum())
        logger.debug("slope clamp engaged at %d of %d spikes", clamped, int(s.sum()))

    kernel = psc_shift_kernel(n_steps, cfg, backprop.psc_convention).to(u.dtype)
    nxt = _next_spike_steps(s)
    sparse = {"auto": None, "dense": False, "sparse": True}[backprop.phi_storage]
    table = PhiTable(neuron_shape, n_steps, dtype=u.dtype, sparse=sparse)

    for t_m in reversed(range(n_steps)):
        rows = torch.nonzero(s[:, t_m] > 0).flatten()
        if rows.numel() == 0:
            continue
        dt_du_m = dt_du[rows, t_m]
        column = kernel[:, t_m].unsqueeze(0) * dt_du_m.unsqueeze(1)

        # intra-neuron term through the immediately following spike t_p
        t_p_of_row = nxt[rows, t_m]
        for t_p in torch.unique(t_p_of_row).tolist():
            if t_p >= n_steps:
                continue
            sel = t_p_of_row == t_p
            intra = table.rows(t_p, rows[sel]) * dreset_dtm(t_p, t_m, cfg)
            intra = intra * dt_du_m[sel].unsqueeze(1)
            # t_p has to lie strictly inside (t_m, t_k)
            intra[:, : t_p + 1] = 0.0
            column[sel] += intra

        table.set_column(t_m, rows, column)

    if backprop.dead_kappa > 0:
        silent = torch.nonzero(s.sum(dim=-1) == 0).flatten()
        if silent.numel():
            sig = torch.sigmoid(u[silent] - cfg.v_th)
            surrogate = backprop.dead_kappa * sig * (1.0 - sig)
            for t in range(n_steps):
                column = torch.zeros(silent.numel(), n_steps, dtype=u.dtype)
                column[:, t] = surrogate[:, t]
                table.set_column(t, silent, column)

    return table


def delta_output(
    out_psc: torch.Tensor,
    target_psc: torch.Tensor,
    phi: PhiTable,
    n_steps: int,
) -> DeltaTrace:
    if out_psc.shape != target_psc.shape or out_psc.shape[-1] != n_steps:
        raise ContractViolation(
            f"output PSC {list(out_psc.shape)} and target PSC "
            f"{list(target_psc.shape)} must share a {n_steps}-step shape"
        )
    if tuple(out_psc.shape[:-1]) != phi.neuron_shape:
        raise ContractViolation("output PSC does not match the phi table")
    return DeltaTrace(phi.contract(out_psc - target_psc))


def delta_hidden(
    next_layers: Union[LayerParams, Sequence[LayerParams]],
    next_delta: DeltaTrace,
    phi: PhiTable,
    n_steps: int,
) -> DeltaTrace:
    """Map delta of the next spiking layer down to this layer.

    `next_layers` lists, in forward order, every layer between this one and
    the next spiking layer inclusive (pooling layers first, if any).
    """
    if isinstance(next_layers, LayerParams):
        next_layers = [next_layers]
    if next_delta.n_steps != n_steps:
        raise ContractViolation(
            f"delta has {next_delta.n_steps} steps, expected {n_steps}"
        )
    g = next_delta.delta
    for layer in reversed(list(next_layers)):
        if tuple(g.shape[1:-1]) != tuple(layer.out_shape):
            raise ContractViolation(
                f"{layer.name} produces {layer.out_shape}, delta is {list(g.shape)}"
            )
        g = layer.adjoint(g)
    if tuple(g.shape[:-1]) != phi.neuron_shape:
        raise ContractViolation(
            f"back-projected error {list(g.shape)} does not match the phi table "
            f"{list(phi.neuron_shape)}"
        )
    return DeltaTrace(phi.contract(g))


def weight_grad(
    pre_psc: torch.Tensor,
    delta: DeltaTrace,
    layer: Optional[LayerParams] = None,
) -> torch.Tensor:
    """Sum over steps of delta (x) pre_psc; without `layer` a plain dense outer product."""
    if layer is not None:
        return layer.weight_grad(pre_psc, delta.delta)
    if pre_psc.shape[-1] != delta.delta.shape[-1]:
        raise ContractViolation("presynaptic PSC and delta are not aligned in time")
    return torch.einsum("...ot,...it->oi", delta.delta, pre_psc)
