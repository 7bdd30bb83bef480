import gzip
import pathlib

import numpy as np
import torch

from tssl_snn import RunConfig, build_network, init_weights

__all__ = [
    "write_idx",
    "write_cifar",
    "aer_bytes",
    "random_network",
    "toy_config",
    "inner",
]


def write_idx(
    root, prefix: str, images: np.ndarray, labels: np.ndarray, compress: bool = False
) -> tuple:
    """Write an IDX image/label pair, e.g. ``train-images-idx3-ubyte``."""
    root = pathlib.Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n, rows, cols = images.shape
    img = np.array([0x803, n, rows, cols], dtype=">u4").tobytes() + images.astype(np.uint8).tobytes()
    lbl = np.array([0x801, len(labels)], dtype=">u4").tobytes() + labels.astype(np.uint8).tobytes()
    suffix = ".gz" if compress else ""
    opener = gzip.open if compress else open
    paths = (
        root / f"{prefix}-images-idx3-ubyte{suffix}",
        root / f"{prefix}-labels-idx1-ubyte{suffix}",
    )
    for path, buf in zip(paths, (img, lbl)):
        with opener(path, "wb") as f:
            f.write(buf)
    return paths


def write_cifar(path, labels, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(len(labels), 3 * 32 * 32), dtype=np.uint8)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pixels], axis=1)
    pathlib.Path(path).write_bytes(records.tobytes())
    return pixels


def aer_bytes(events) -> bytes:
    """40-bit records: x, y, polarity bit + 23-bit timestamp."""
    out = bytearray()
    for x, y, p, t in events:
        out += bytes([x, y, (p << 7) | ((t >> 16) & 0x7F), (t >> 8) & 0xFF, t & 0xFF])
    return bytes(out)


def random_network(architecture: str, seed: int = 0, n_steps: int = 5, **kwargs):
    return init_weights(build_network(architecture, n_steps=n_steps, **kwargs), seed)


def toy_config(**overrides) -> RunConfig:
    values = dict(
        architecture="6-8-3",
        n_steps=4,
        dataset="synthetic",
        synthetic_samples=6,
        epochs=2,
        batch_size=3,
        learning_rate=1e-2,
        dead_kappa=1.0,
        seed=0,
    )
    values.update(overrides)
    return RunConfig(**values)


def inner(x: torch.Tensor, y: torch.Tensor) -> float:
    return float((x * y).sum())
