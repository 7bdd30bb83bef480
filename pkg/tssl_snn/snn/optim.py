from dataclasses import dataclass, field
from typing import Union

import torch

from ..errors import ConfigurationError, ContractViolation, NonFiniteError
from .backprop import GradientSet
from .network import NetworkSpec

__all__ = ["OptimState", "adam_step", "sgd_step", "optimizer_step"]


@dataclass
class OptimState:
    """
    Optimizer state.

    Parameters
    ----------
    kind : {"adam", "sgd"}, default="adam"
    lr : float, default=5e-4
    beta1, beta2 : float, default=0.9, 0.999
        Adam moment decay rates.
    eps : float, default=1e-8
        Adam denominator floor.
    m, v : list
        Adam first and second moments, one entry per layer (None for layers
        without weights).
    step : int
        Number of updates applied so far.
    """

    kind: str = "adam"
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")

    @classmethod
    def for_network(cls, net: NetworkSpec, **kwargs) -> "OptimState":
        state = cls(**kwargs)
        state.m = [None if w is None else torch.zeros_like(w) for w in net.weights]
        state.v = [None if w is None else torch.zeros_like(w) for w in net.weights]
        return state


def _layers(weights: Union[NetworkSpec, list]) -> list:
    return weights.layers if isinstance(weights, NetworkSpec) else list(weights)


def _check(grads: GradientSet, layers: list):
    if len(grads) != len(layers):
        raise ContractViolation(
            f"{len(grads)} gradients for a {len(layers)}-layer network"
        )
    for idx, (g, layer) in enumerate(zip(grads, layers)):
        if g is None:
            continue
        if layer.weights is None or g.shape != layer.weights.shape:
            raise ContractViolation(
                f"gradient of shape {list(g.shape)} for {layer.name}"
            )
    bad = grads.first_non_finite()
    if bad is not None:
        raise NonFiniteError("non-finite gradient", layer=bad)


def adam_step(
    state: OptimState, grads: GradientSet, weights: Union[NetworkSpec, list]
) -> list:
    """Bias-corrected Adam update, in place. Returns the updated layers."""
    layers = _layers(weights)
    _check(grads, layers)
    if not state.m:
        state.m = [None if x.weights is None else torch.zeros_like(x.weights) for x in layers]
        state.v = [None if x.weights is None else torch.zeros_like(x.weights) for x in layers]

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for idx, (g, layer) in enumerate(zip(grads, layers)):
        if g is None:
            continue
        m, v = state.m[idx], state.v[idx]
        if m.shape != g.shape:
            raise ContractViolation(f"Adam moments do not match {layer.name}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[idx], state.v[idx] = m, v
        m_hat = m / bc1
        v_hat = v / bc2
        layer.weights = layer.weights - state.lr * m_hat / (v_hat.sqrt() + state.eps)
    return layers


def sgd_step(
    state: OptimState, grads: GradientSet, weights: Union[NetworkSpec, list]
) -> list:
    layers = _layers(weights)
    _check(grads, layers)
    state.step += 1
    for g, layer in zip(grads, layers):
        if g is not None:
            layer.weights = layer.weights - state.lr * g
    return layers


def optimizer_step(
    state: OptimState, grads: GradientSet, weights: Union[NetworkSpec, list]
) -> list:
    if state.kind == "adam":
        return adam_step(state, grads, weights)
    return sgd_step(state, grads, weights)
