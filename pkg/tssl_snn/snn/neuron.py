"""Discrete-time leaky integrate-and-fire neurons.

The membrane and synapse follow the forward-Euler recursions

    a[t] = (1 - 1/tau_s) * a[t-1] + s[t]
    u[t] = (1 - 1/tau_m) * (u[t-1] - v_th * s[t-1]) + i_net[t]
    s[t] = 1 if u[t] >= v_th else 0

with the synaptic input gain and R/tau_m absorbed into the weights, and the
reset applied by subtraction to the potential carried into the step after a
spike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import torch

from ..errors import ConfigurationError

if TYPE_CHECKING:
    from .layers import LayerParams

__all__ = [
    "NeuronConfig",
    "NeuronTrace",
    "SpikeRecord",
    "step_psc",
    "step_membrane",
    "fire",
    "psc_filter",
    "simulate_layer",
]

Number = Union[float, torch.Tensor]


@dataclass(frozen=True)
class NeuronConfig:
    """LIF constants shared by every neuron of a network.

    Parameters
    ----------
    tau_m : float, default=5.0
        Membrane time constant in time steps. Must be > 1.
    tau_s : float, default=3.0
        Synaptic time constant in time steps. Must be > 1.
    v_th : float, default=1.0
        Firing threshold, also the reset magnitude.
    dt : float, default=1.0
        Simulation step. Fixed at one time unit.
    """

    tau_m: float = 5.0
    tau_s: float = 3.0
    v_th: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if not self.tau_m > 1:
            raise ConfigurationError(f"tau_m must be > 1, got {self.tau_m}")
        if not self.tau_s > 1:
            raise ConfigurationError(f"tau_s must be > 1, got {self.tau_s}")
        if not self.v_th > 0:
            raise ConfigurationError(f"v_th must be > 0, got {self.v_th}")
        if self.dt != 1.0:
            raise ConfigurationError(f"dt is fixed at 1, got {self.dt}")

    @property
    def leak_m(self) -> float:
        return 1.0 - 1.0 / self.tau_m

    @property
    def leak_s(self) -> float:
        return 1.0 - 1.0 / self.tau_s


@dataclass
class NeuronTrace:
    """Per-neuron state series, time on the last axis.

    ``u``, ``a`` and ``i_net`` share the shape ``[..., n_steps]``.
    """

    u: torch.Tensor
    a: torch.Tensor
    i_net: torch.Tensor

    def __post_init__(self):
        if not (self.u.shape == self.a.shape == self.i_net.shape):
            raise ConfigurationError(
                f"trace shapes differ: u{tuple(self.u.shape)} "
                f"a{tuple(self.a.shape)} i_net{tuple(self.i_net.shape)}"
            )

    @property
    def n_steps(self) -> int:
        return self.u.shape[-1]


@dataclass
class SpikeRecord:
    """Binary raster with time on the last axis."""

    raster: torch.Tensor

    @property
    def n_steps(self) -> int:
        return self.raster.shape[-1]

    @property
    def firing_steps(self) -> list[list[int]]:
        """Ascending firing steps for every neuron, leading axes flattened."""
        flat = self.raster.reshape(-1, self.n_steps)
        return [torch.nonzero(row).flatten().tolist() for row in flat]

    def counts(self) -> torch.Tensor:
        return self.raster.sum(dim=-1)


def step_psc(a_prev: Number, spike: Number, cfg: NeuronConfig) -> Number:
    return cfg.leak_s * a_prev + spike


def step_membrane(
    u_prev: Number, i_net: Number, fired_prev: Number, cfg: NeuronConfig
) -> Number:
    return cfg.leak_m * (u_prev - cfg.v_th * fired_prev) + i_net


def fire(u: Number, cfg: NeuronConfig) -> Number:
    if isinstance(u, torch.Tensor):
        return (u >= cfg.v_th).to(u.dtype)
    return int(u >= cfg.v_th)


def psc_filter(raster: torch.Tensor, tau: float) -> torch.Tensor:
    """Filter a raster ``[..., n_steps]`` through the first-order kernel."""
    leak = 1.0 - 1.0 / tau
    out = torch.empty_like(raster)
    a = torch.zeros_like(raster[..., 0])
    for t in range(raster.shape[-1]):
        a = leak * a + raster[..., t]
        out[..., t] = a
    return out


def simulate_layer(
    incoming_psc: torch.Tensor,
    layer: LayerParams,
    cfg: NeuronConfig,
    n_steps: int,
) -> tuple[NeuronTrace, SpikeRecord]:
    """Run one spiking layer over the whole window.

    ``incoming_psc`` is ``[batch, *layer.in_shape, n_steps]``. The returned
    traces are ``[batch, *layer.out_shape, n_steps]``.
    """
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be >= 1, got {n_steps}")
    if not layer.spiking:
        raise ConfigurationError(f"{layer.name} has no neurons to simulate")
    expected = tuple(layer.in_shape) + (n_steps,)
    if tuple(incoming_psc.shape[1:]) != expected:
        raise ConfigurationError(
            f"{layer.name} expects input [batch, {', '.join(map(str, expected))}], "
            f"got {list(incoming_psc.shape)}"
        )

    # the linear map has no time dependence, so the whole window goes at once
    i_net = layer.forward(incoming_psc)

    u_all = torch.empty_like(i_net)
    a_all = torch.empty_like(i_net)
    s_all = torch.empty_like(i_net)

    u = torch.zeros_like(i_net[..., 0])
    a = torch.zeros_like(u)
    s = torch.zeros_like(u)
    for t in range(n_steps):
        u = step_membrane(u, i_net[..., t], s, cfg)
        s = fire(u, cfg)
        a = step_psc(a, s, cfg)
        u_all[..., t] = u
        a_all[..., t] = a
        s_all[..., t] = s

    return NeuronTrace(u=u_all, a=a_all, i_net=i_net), SpikeRecord(raster=s_all)
