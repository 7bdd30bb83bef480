"""Dense, conv2d and average-pooling layers.

Every layer is a time-invariant linear map applied independently at each
step. Activations carry time on the last axis: ``[batch, *shape, n_steps]``.
The map, its adjoint, and the weight gradient of ``sum_t <delta_t, W a_t>``
are all expressed through torch kernels with the time axis folded into the
batch axis.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import torch
import torch.nn.functional as F
from torch.nn import grad as nn_grad

from ..errors import ConfigurationError, ContractViolation

__all__ = ["LayerKind", "LayerParams", "dense_layer", "conv_layer", "pool_layer"]


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    AVGPOOL = "avgpool"


def _fold_time(x: torch.Tensor) -> torch.Tensor:
    # [B, C, H, W, T] -> [B*T, C, H, W]
    b, c, h, w, t = x.shape
    return x.permute(0, 4, 1, 2, 3).reshape(b * t, c, h, w)


def _unfold_time(x: torch.Tensor, batch: int) -> torch.Tensor:
    bt, c, h, w = x.shape
    return x.reshape(batch, bt // batch, c, h, w).permute(0, 2, 3, 4, 1)


@dataclass
class LayerParams:
    """One layer of a network.

    Parameters
    ----------
    kind : LayerKind
        dense, conv2d or avgpool.
    in_shape : tuple of int
        Per-sample input shape without the time axis. ``(n,)`` for dense
        inputs, ``(channels, height, width)`` for spatial ones.
    out_shape : tuple of int
        Per-sample output shape without the time axis.
    weights : torch.Tensor, optional
        ``[out, in]`` for dense, ``[out_ch, in_ch, k, k]`` for conv2d, None
        for pooling. None until `init_weights` populates it.
    kernel_size, stride, padding : int
        Spatial geometry of conv2d / avgpool layers.
    bias_current : float, default=0.0
        Constant current added to the net input of every neuron.
    index : int
        Position in the network, used in messages.
    """

    kind: LayerKind
    in_shape: tuple
    out_shape: tuple
    weights: Optional[torch.Tensor] = None
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    bias_current: float = 0.0
    index: int = field(default=0, compare=False)

    @property
    def name(self) -> str:
        return f"layer {self.index} ({self.describe()})"

    @property
    def spiking(self) -> bool:
        return self.kind is not LayerKind.AVGPOOL

    @property
    def weight_shape(self) -> Optional[tuple]:
        if self.kind is LayerKind.DENSE:
            return (self.out_shape[0], math.prod(self.in_shape))
        if self.kind is LayerKind.CONV2D:
            return (self.out_shape[0], self.in_shape[0], self.kernel_size, self.kernel_size)
        return None

    @property
    def fan_in(self) -> int:
        if self.kind is LayerKind.DENSE:
            return math.prod(self.in_shape)
        if self.kind is LayerKind.CONV2D:
            return self.in_shape[0] * self.kernel_size**2
        return self.kernel_size**2

    def describe(self) -> str:
        if self.kind is LayerKind.DENSE:
            return f"dense {math.prod(self.in_shape)}->{self.out_shape[0]}"
        if self.kind is LayerKind.CONV2D:
            return f"{self.out_shape[0]}C{self.kernel_size} s{self.stride} p{self.padding}"
        return f"P{self.kernel_size}"

    def _check_weights(self):
        if self.spiking and self.weights is None:
            raise ConfigurationError(f"{self.name} has no weights; run init_weights")

    # linear map and its adjoint

    def forward(self, a: torch.Tensor) -> torch.Tensor:
        """Apply the layer to ``[B, *in_shape, T]``; adds the bias current."""
        self._check_weights()
        batch, n_steps = a.shape[0], a.shape[-1]
        if self.kind is LayerKind.DENSE:
            x = a.reshape(batch, -1, n_steps)
            out = torch.einsum("oi,bit->bot", self.weights, x)
        elif self.kind is LayerKind.CONV2D:
            out = F.conv2d(
                _fold_time(a), self.weights, stride=self.stride, padding=self.padding
            )
            out = _unfold_time(out, batch)
        else:
            out = F.avg_pool2d(_fold_time(a), self.kernel_size, self.kernel_size)
            return _unfold_time(out, batch)
        if self.bias_current:
            out = out + self.bias_current
        return out

    def adjoint(self, g: torch.Tensor) -> torch.Tensor:
        """Transpose of `forward` (without bias) applied to ``[B, *out_shape, T]``."""
        self._check_weights()
        batch, n_steps = g.shape[0], g.shape[-1]
        if self.kind is LayerKind.DENSE:
            out = torch.einsum("oi,bot->bit", self.weights, g)
            return out.reshape(batch, *self.in_shape, n_steps)
        folded = _fold_time(g)
        in_size = (folded.shape[0], *self.in_shape)
        if self.kind is LayerKind.CONV2D:
            out = nn_grad.conv2d_input(
                in_size, self.weights, folded, stride=self.stride, padding=self.padding
            )
            return _unfold_time(out, batch)
        k = self.kernel_size
        out = folded.repeat_interleave(k, dim=-2).repeat_interleave(k, dim=-1) / k**2
        # floor division in the forward map leaves trailing rows/cols unused
        pad_h = self.in_shape[1] - out.shape[-2]
        pad_w = self.in_shape[2] - out.shape[-1]
        out = F.pad(out, (0, pad_w, 0, pad_h))
        return _unfold_time(out, batch)

    def weight_grad(self, a_pre: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
        """Sum over batch and steps of ``delta[t] (x) a_pre[t]``, weight-shaped."""
        self._check_weights()
        if a_pre.shape[-1] != delta.shape[-1] or a_pre.shape[0] != delta.shape[0]:
            raise ContractViolation(
                f"{self.name}: presynaptic PSC {list(a_pre.shape)} and delta "
                f"{list(delta.shape)} are not aligned"
            )
        if self.kind is LayerKind.DENSE:
            x = a_pre.reshape(a_pre.shape[0], -1, a_pre.shape[-1])
            d = delta.reshape(delta.shape[0], -1, delta.shape[-1])
            return torch.einsum("bot,bit->oi", d, x)
        if self.kind is LayerKind.CONV2D:
            return nn_grad.conv2d_weight(
                _fold_time(a_pre),
                self.weights.shape,
                _fold_time(delta),
                stride=self.stride,
                padding=self.padding,
            )
        raise ContractViolation(f"{self.name} has no trainable weights")

    def as_dense(self) -> "LayerParams":
        """Materialize this layer as an explicit dense layer on flattened input."""
        self._check_weights()
        n_in = math.prod(self.in_shape)
        dtype = torch.float64 if self.weights is None else self.weights.dtype
        basis = torch.eye(n_in, dtype=dtype).reshape(n_in, *self.in_shape, 1)
        unbiased = replace(self, bias_current=0.0)
        columns = unbiased.forward(basis).reshape(n_in, -1)
        return LayerParams(
            kind=LayerKind.DENSE,
            in_shape=(n_in,),
            out_shape=(columns.shape[1],),
            weights=columns.T.contiguous(),
            bias_current=self.bias_current,
            index=self.index,
        )


def dense_layer(in_shape: tuple, n_out: int, **kwargs) -> LayerParams:
    return LayerParams(LayerKind.DENSE, tuple(in_shape), (n_out,), **kwargs)


def conv_layer(
    in_shape: tuple,
    out_channels: int,
    kernel_size: int,
    stride: int = 1,
    padding: int = 0,
    **kwargs,
) -> LayerParams:
    if len(in_shape) != 3:
        raise ConfigurationError(
            f"convolution needs a (channels, height, width) input, got {in_shape}"
        )
    c, h, w = in_shape
    out_h = (h + 2 * padding - kernel_size) // stride + 1
    out_w = (w + 2 * padding - kernel_size) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(
            f"{kernel_size}x{kernel_size} kernel does not fit a {h}x{w} input"
        )
    return LayerParams(
        LayerKind.CONV2D,
        (c, h, w),
        (out_channels, out_h, out_w),
        kernel_size=kernel_size,
        stride=stride,
        padding=padding,
        **kwargs,
    )


def pool_layer(in_shape: tuple, kernel_size: int, **kwargs) -> LayerParams:
    if len(in_shape) != 3:
        raise ConfigurationError(
            f"pooling needs a (channels, height, width) input, got {in_shape}"
        )
    c, h, w = in_shape
    if h < kernel_size or w < kernel_size:
        raise ConfigurationError(f"P{kernel_size} does not fit a {h}x{w} input")
    return LayerParams(
        LayerKind.AVGPOOL,
        (c, h, w),
        (c, h // kernel_size, w // kernel_size),
        kernel_size=kernel_size,
        stride=kernel_size,
        **kwargs,
    )
