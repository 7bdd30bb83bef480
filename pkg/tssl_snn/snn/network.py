import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import pandas as pd
import torch

from ..errors import ConfigurationError, ContractViolation
from .backprop import (
    BackpropConfig,
    DeltaTrace,
    GradientSet,
    build_phi,
    delta_hidden,
    delta_output,
    weight_grad,
)
from .layers import LayerKind, LayerParams, conv_layer, dense_layer, pool_layer
from .neuron import NeuronConfig, NeuronTrace, SpikeRecord, psc_filter, simulate_layer

__all__ = [
    "NetworkSpec",
    "LayerRecord",
    "NetworkState",
    "parse_architecture",
    "build_network",
    "layer_table",
    "init_weights",
    "forward_network",
    "backward_network",
]

logger = logging.getLogger(__name__)

_INPUT = re.compile(r"(\d+)x(\d+)(?:x(\d+))?", re.IGNORECASE)
_CONV = re.compile(r"(\d+)C(\d+)(?:s(\d+))?(?:p(\d+))?", re.IGNORECASE)
_POOL = re.compile(r"P(\d+)", re.IGNORECASE)
_DENSE = re.compile(r"\d+")


@dataclass
class NetworkSpec:
    """
    Feed-forward spiking network.

    Parameters
    ----------
    layers : list of LayerParams
        Layers in forward order. The last one must be spiking.
    neuron : NeuronConfig
        LIF constants shared by every spiking layer.
    n_steps : int
        Simulation window length.
    input_shape : tuple of int
        Per-sample input shape, ``(n,)`` or ``(channels, height, width)``.
    architecture : str, optional
        The architecture string the network was parsed from.
    """

    layers: list
    neuron: NeuronConfig
    n_steps: int
    input_shape: tuple
    architecture: str = ""

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.layers:
            raise ConfigurationError("a network needs at least one layer")
        shape = tuple(self.input_shape)
        for idx, layer in enumerate(self.layers):
            layer.index = idx
            if tuple(layer.in_shape) != shape:
                raise ConfigurationError(
                    f"{layer.name} expects input {tuple(layer.in_shape)}, "
                    f"previous layer produces {shape}"
                )
            shape = tuple(layer.out_shape)
        if not self.layers[-1].spiking:
            raise ConfigurationError("the output layer must be a spiking layer")

    @property
    def output_size(self) -> int:
        return math.prod(self.layers[-1].out_shape)

    @property
    def weights(self) -> list:
        return [layer.weights for layer in self.layers]

    @property
    def spiking_layers(self) -> list:
        return [layer for layer in self.layers if layer.spiking]


@dataclass
class LayerRecord:
    """Everything the backward pass needs from one layer of a forward pass."""

    input_psc: torch.Tensor
    output_psc: torch.Tensor
    trace: Optional[NeuronTrace] = None
    spikes: Optional[SpikeRecord] = None


@dataclass
class NetworkState:
    records: list = field(default_factory=list)

    @property
    def output_psc(self) -> torch.Tensor:
        return self.records[-1].output_psc

    @property
    def output_spikes(self) -> SpikeRecord:
        return self.records[-1].spikes


def _parse_input_token(token: str) -> Optional[tuple]:
    m = _INPUT.fullmatch(token)
    if m:
        h, w, c = m.groups()
        return (int(c) if c else 1, int(h), int(w))
    if _DENSE.fullmatch(token):
        return (int(token),)
    return None


def parse_architecture(
    architecture: str, input_shape: Optional[Sequence[int]] = None
) -> tuple[tuple, list]:
    """
    Parse an architecture string such as ``"28x28-15C5-P2-40C5-P2-300-10"``.

    Tokens are separated by ``-``: ``<n>C<k>`` is a convolution with `n` filters
    of size ``k x k`` (optional ``s<stride>`` and ``p<padding>`` suffixes),
    ``P<k>`` is a ``k x k`` average pooling, and a bare integer is a dense
    layer. When `input_shape` is not given, the first token names the input:
    ``HxW`` (one channel), ``HxWxC`` or a bare integer for flat input.

    Returns
    -------
    tuple
        ``(input_shape, layers)`` with the layers' shapes resolved but their
        weights left empty.
    """
    tokens = [t.strip() for t in architecture.strip().split("-") if t.strip()]
    if not tokens:
        raise ConfigurationError("empty architecture string")

    if input_shape is None:
        shape = _parse_input_token(tokens[0])
        if shape is None:
            raise ConfigurationError(
                f"architecture {architecture!r} needs a leading input token "
                "(e.g. 784 or 28x28) when no input shape is given"
            )
        tokens = tokens[1:]
    else:
        shape = tuple(int(s) for s in input_shape)
        leading = _INPUT.fullmatch(tokens[0])
        if leading:
            if _parse_input_token(tokens[0]) != shape:
                raise ConfigurationError(
                    f"input token {tokens[0]!r} disagrees with input shape {shape}"
                )
            tokens = tokens[1:]
    if not tokens:
        raise ConfigurationError(f"architecture {architecture!r} has no layers")

    input_shape = shape
    layers = []
    for idx, token in enumerate(tokens):
        if m := _CONV.fullmatch(token):
            n_out, k, s, p = m.groups()
            layer = conv_layer(
                shape, int(n_out), int(k), stride=int(s or 1), padding=int(p or 0)
            )
        elif m := _POOL.fullmatch(token):
            layer = pool_layer(shape, int(m.group(1)))
        elif _DENSE.fullmatch(token):
            layer = dense_layer(shape, int(token))
        else:
            raise ConfigurationError(f"unrecognized architecture token {token!r}")
        layer.index = idx
        layers.append(layer)
        shape = layer.out_shape
    return input_shape, layers


def build_network(
    architecture: str,
    neuron: Optional[NeuronConfig] = None,
    n_steps: int = 5,
    input_shape: Optional[Sequence[int]] = None,
    bias_current: float = 0.0,
) -> NetworkSpec:
    resolved_shape, layers = parse_architecture(architecture, input_shape)
    for layer in layers:
        if layer.spiking:
            layer.bias_current = bias_current
    return NetworkSpec(
        layers=layers,
        neuron=neuron or NeuronConfig(),
        n_steps=n_steps,
        input_shape=resolved_shape,
        architecture=architecture,
    )


def layer_table(net: NetworkSpec) -> pd.DataFrame:
    """Resolved layer shapes, one row per layer."""
    rows = []
    for layer in net.layers:
        shape = layer.weight_shape
        rows.append(
            {
                "layer": layer.index,
                "kind": layer.kind.value,
                "in_shape": "x".join(map(str, layer.in_shape)),
                "out_shape": "x".join(map(str, layer.out_shape)),
                "weights": "x".join(map(str, shape)) if shape else "-",
                "params": int(torch.Size(shape).numel()) if shape else 0,
            }
        )
    return pd.DataFrame(rows)


def init_weights(net: NetworkSpec, seed: int, scale: float = 3.0) -> NetworkSpec:
    """
    Fill every spiking layer with uniform weights in ``+-scale * v_th / sqrt(fan_in)``.

    The same seed always produces the same weights. Weights are float64.
    """
    generator = torch.Generator().manual_seed(seed)
    for layer in net.layers:
        if not layer.spiking:
            continue
        bound = scale * net.neuron.v_th / layer.fan_in**0.5
        w = torch.rand(layer.weight_shape, generator=generator, dtype=torch.float64)
        layer.weights = (2.0 * w - 1.0) * bound
        logger.debug("%s initialized within +-%.4g", layer.name, bound)
    return net


def forward_network(input_psc: torch.Tensor, net: NetworkSpec) -> NetworkState:
    """
    Simulate the network on ``[batch, *input_shape, n_steps]`` input PSCs.

    Pooling layers average the incoming PSC spatially and have no neurons.
    """
    expected = tuple(net.input_shape) + (net.n_steps,)
    if input_psc.dim() != len(expected) + 1 or tuple(input_psc.shape[1:]) != expected:
        raise ConfigurationError(
            f"{net.layers[0].name} expects input [batch, "
            f"{', '.join(map(str, expected))}], got {list(input_psc.shape)}"
        )

    state = NetworkState()
    a = input_psc
    for layer in net.layers:
        if layer.spiking:
            trace, spikes = simulate_layer(a, layer, net.neuron, net.n_steps)
            state.records.append(LayerRecord(a, trace.a, trace, spikes))
            a = trace.a
        else:
            out = layer.forward(a)
            state.records.append(LayerRecord(a, out))
            a = out
    return state


def backward_network(
    state: NetworkState,
    target_psc: torch.Tensor,
    net: NetworkSpec,
    backprop: Optional[BackpropConfig] = None,
    kernel_tau: Optional[float] = None,
    reduction: str = "mean",
) -> GradientSet:
    """
    Per-layer weight gradients of the summed loss of one forward pass.

    `target_psc` is the desired raster filtered with `kernel_tau` (default
    ``tau_s``). With ``reduction="mean"`` gradients are averaged over the
    batch, with ``"sum"`` they are summed.
    """
    if len(state.records) != len(net.layers):
        raise ContractViolation(
            f"forward pass recorded {len(state.records)} layers, network has "
            f"{len(net.layers)}"
        )
    if reduction not in ("mean", "sum"):
        raise ContractViolation(f"unknown reduction {reduction!r}")
    backprop = backprop or BackpropConfig()
    kernel_tau = kernel_tau or net.neuron.tau_s

    top = state.records[-1]
    if kernel_tau == net.neuron.tau_s:
        out_psc = top.output_psc
    else:
        out_psc = psc_filter(top.spikes.raster, kernel_tau)
    if target_psc.numel() != out_psc.numel():
        raise ContractViolation(
            f"target {list(target_psc.shape)} does not match output {list(out_psc.shape)}"
        )
    target_psc = target_psc.reshape(out_psc.shape)
    # the output layer is read through the loss kernel
    out_neuron = replace(net.neuron, tau_s=kernel_tau)

    grads: list = [None] * len(net.layers)
    delta: Optional[DeltaTrace] = None
    # layers between the current spiking layer and the next spiking one above
    above: list = []
    for idx in reversed(range(len(net.layers))):
        layer, record = net.layers[idx], state.records[idx]
        if not layer.spiking:
            above.insert(0, layer)
            continue
        if record.trace is None or record.spikes is None:
            raise ContractViolation(f"{layer.name} has no recorded traces")
        cfg = out_neuron if delta is None else net.neuron
        phi = build_phi(record.trace, record.spikes, cfg, net.n_steps, backprop)
        if delta is None:
            delta = delta_output(out_psc, target_psc, phi, net.n_steps)
        else:
            delta = delta_hidden(above, delta, phi, net.n_steps)
        grads[idx] = weight_grad(record.input_psc, delta, layer)
        above = [layer]

    gradients = GradientSet(grads)
    if reduction == "mean":
        gradients = gradients.scale(1.0 / target_psc.shape[0])
    return gradients
