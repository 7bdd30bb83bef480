"""Binary weight container.

Layout (all integers little-endian):

    8 bytes   magic b"TSSLBPCK"
    u32       format version
    32 bytes  SHA-256 digest of the network-defining config
    u32       number of layers
    per layer u8 kind code, u8 ndim, ndim x u32 dims (ndim = 0 without weights)
    payload   float32 weights of every weighted layer, in layer order
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from ..errors import (
    ArchitectureMismatchError,
    CheckpointDigestError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from .layers import LayerKind
from .network import NetworkSpec

__all__ = [
    "MAGIC",
    "VERSION",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "apply_checkpoint",
]

logger = logging.getLogger(__name__)

MAGIC = b"TSSLBPCK"
VERSION = 1

_KIND_CODES = {LayerKind.DENSE: 0, LayerKind.CONV2D: 1, LayerKind.AVGPOOL: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


@dataclass
class Checkpoint:
    digest: str
    kinds: list
    weights: list
    version: int = VERSION


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint ends inside the {what} (needs {self.pos + n} bytes, "
                f"has {len(self.buf)})"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return int(np.frombuffer(self.take(4, what), dtype="<u4")[0])

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def save_checkpoint(
    weights: Union[NetworkSpec, list],
    digest: str,
    path: Union[str, os.PathLike],
) -> None:
    """
    Write a checkpoint.

    Parameters
    ----------
    weights : NetworkSpec or list of LayerParams
        The layers to store. Weights are cast to float32.
    digest : str
        Hex SHA-256 digest of the config the weights belong to.
    path : str or PathLike
    """
    layers = weights.layers if isinstance(weights, NetworkSpec) else list(weights)
    digest_bytes = bytes.fromhex(digest)
    if len(digest_bytes) != 32:
        raise CheckpointError("config digest must be a 32-byte SHA-256 hex string")

    header = [MAGIC, np.array([VERSION], dtype="<u4").tobytes(), digest_bytes]
    header.append(np.array([len(layers)], dtype="<u4").tobytes())
    payload = []
    for layer in layers:
        w = layer.weights
        dims = [] if w is None else list(w.shape)
        header.append(bytes([_KIND_CODES[layer.kind], len(dims)]))
        header.append(np.array(dims, dtype="<u4").tobytes())
        if w is not None:
            payload.append(w.detach().cpu().numpy().astype("<f4").tobytes())

    with open(path, "wb") as f:
        f.write(b"".join(header))
        f.write(b"".join(payload))
    logger.info("wrote checkpoint %s (%d layers)", path, len(layers))


def load_checkpoint(
    path: Union[str, os.PathLike], digest: Optional[str] = None
) -> Checkpoint:
    """
    Read a checkpoint written by `save_checkpoint`.

    If `digest` is given, a checkpoint written for another config raises
    `CheckpointDigestError`. Weights come back as float64 tensors holding the
    stored float32 values exactly.
    """
    with open(path, "rb") as f:
        reader = _Reader(f.read())

    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointMagicError(f"{path} is not a checkpoint (magic {magic!r})")
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is not supported (expected {VERSION})"
        )
    stored_digest = reader.take(32, "config digest").hex()
    if digest is not None and stored_digest != digest:
        raise CheckpointDigestError(
            f"checkpoint was written for config {stored_digest[:12]}, "
            f"current config is {digest[:12]}"
        )

    n_layers = reader.u32("layer count")
    kinds, shapes = [], []
    for _ in range(n_layers):
        code = reader.u8("layer header")
        if code not in _CODE_KINDS:
            raise CheckpointError(f"unknown layer kind code {code}")
        ndim = reader.u8("layer header")
        dims = [reader.u32("layer header") for _ in range(ndim)]
        kinds.append(_CODE_KINDS[code])
        shapes.append(tuple(dims) if ndim else None)

    weights = []
    for shape in shapes:
        if shape is None:
            weights.append(None)
            continue
        n = int(np.prod(shape))
        raw = reader.take(4 * n, "weight payload")
        values = np.frombuffer(raw, dtype="<f4").reshape(shape)
        weights.append(torch.from_numpy(values.astype(np.float64)))
    if reader.pos != len(reader.buf):
        raise CheckpointError(
            f"{len(reader.buf) - reader.pos} trailing bytes after the weight payload"
        )
    return Checkpoint(digest=stored_digest, kinds=kinds, weights=weights, version=version)


def apply_checkpoint(net: NetworkSpec, checkpoint: Checkpoint) -> NetworkSpec:
    """Load checkpoint weights into `net`, checking layer kinds and shapes."""
    if len(checkpoint.weights) != len(net.layers):
        raise ArchitectureMismatchError(
            f"checkpoint has {len(checkpoint.weights)} layers, network has "
            f"{len(net.layers)}"
        )
    for layer, kind, w in zip(net.layers, checkpoint.kinds, checkpoint.weights):
        if kind is not layer.kind:
            raise ArchitectureMismatchError(
                f"{layer.name} is {layer.kind.value}, checkpoint stores {kind.value}"
            )
        expected = layer.weight_shape
        got = None if w is None else tuple(w.shape)
        if got != expected:
            raise ArchitectureMismatchError(
                f"{layer.name} expects weights {expected}, checkpoint stores {got}"
            )
    for layer, w in zip(net.layers, checkpoint.weights):
        layer.weights = None if w is None else w.clone()
    return net
