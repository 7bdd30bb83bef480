import gzip
import logging
import math
import os
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch

from ..errors import (
    CifarFormatError,
    ConfigurationError,
    CountMismatchError,
    EventParseError,
    IdxMagicError,
    IdxTruncatedError,
)
from ..snn.neuron import psc_filter

__all__ = [
    "Sample",
    "DatasetHandle",
    "EventStream",
    "load_idx",
    "load_cifar_batch",
    "read_events",
    "bin_events",
    "events_to_psc",
    "load_event_dir",
    "synthetic_dataset",
    "encode_static",
    "make_batches",
    "load_batch",
    "prefetch",
    "open_dataset",
    "load_reference_data",
]

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32
AER_RECORD = 5


@dataclass
class Sample:
    input_psc: torch.Tensor
    label: int


@dataclass
class DatasetHandle:
    """
    In-memory dataset.

    Parameters
    ----------
    kind : str
        ``"idx-images"``, ``"cifar"``, ``"event-bins"`` or ``"synthetic"``.
    inputs : torch.Tensor
        Static images ``[N, *input_shape]`` in [0, 1] when `n_steps` is None,
        otherwise input PSC series ``[N, *input_shape, n_steps]``.
    labels : torch.Tensor
        Class ids, ``[N]``.
    input_shape : tuple of int
        Per-sample shape without the time axis.
    n_classes : int
    n_steps : int, optional
        Set when `inputs` already carry a time axis.
    seed : int, default=0
        Seed of the subset shuffle.
    source : str, optional
        Where the samples were read from.
    indices : list of int, optional
        Positions in the source selected by `subset`.
    """

    kind: str
    inputs: torch.Tensor
    labels: torch.Tensor
    input_shape: tuple
    n_classes: int
    n_steps: Optional[int] = None
    seed: int = 0
    source: str = ""
    indices: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def count(self) -> int:
        return len(self)

    def subset(self, n: Optional[int], seed: Optional[int] = None) -> "DatasetHandle":
        """First `n` samples after a seeded shuffle; the chosen indices are kept."""
        if n is None or n >= len(self):
            return self
        seed = self.seed if seed is None else seed
        order = np.random.default_rng(seed).permutation(len(self))[:n]
        idx = torch.from_numpy(order)
        base = self.indices
        chosen = [int(i) for i in order] if base is None else [base[int(i)] for i in order]
        return replace(
            self,
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            seed=seed,
            indices=chosen,
        )

    def head(self, n: Optional[int]) -> "DatasetHandle":
        """First `n` samples in stored order."""
        if n is None or n >= len(self):
            return self
        base = self.indices
        return replace(
            self,
            inputs=self.inputs[:n],
            labels=self.labels[:n],
            indices=list(range(n)) if base is None else base[:n],
        )

    def sample(self, i: int, n_steps: int) -> Sample:
        x = self.inputs[i]
        if self.n_steps is None:
            x = encode_static(x, n_steps)
        elif self.n_steps != n_steps:
            raise ConfigurationError(
                f"dataset was binned to {self.n_steps} steps, network runs {n_steps}"
            )
        return Sample(input_psc=x, label=int(self.labels[i]))


@dataclass
class EventStream:
    """Address events; timestamps in microseconds."""

    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_records(cls, records: Iterable[Sequence[int]]) -> "EventStream":
        arr = np.asarray(list(records), dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


# ---------------------------------------------------------------------------
# static images
# ---------------------------------------------------------------------------


def _read_bytes(path: Union[str, os.PathLike]) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _idx_header(buf: bytes, path, magic: int, ndim: int) -> tuple:
    header_len = 4 * (1 + ndim)
    if len(buf) < 4:
        raise IdxTruncatedError(f"{path} is too short to hold an IDX header")
    found = int(np.frombuffer(buf[:4], dtype=">u4")[0])
    if found != magic:
        raise IdxMagicError(f"{path} has IDX magic {found:#010x}, expected {magic:#010x}")
    if len(buf) < header_len:
        raise IdxTruncatedError(f"{path} ends inside the IDX header")
    return tuple(int(d) for d in np.frombuffer(buf[4:header_len], dtype=">u4"))


def load_idx(
    images_path: Union[str, os.PathLike],
    labels_path: Union[str, os.PathLike],
    n_classes: int = 10,
) -> DatasetHandle:
    """
    Load an IDX image/label pair (MNIST, Fashion-MNIST), optionally gzipped.

    Pixels are normalized to [0, 1] by dividing by 255.
    """
    img_buf = _read_bytes(images_path)
    n, rows, cols = _idx_header(img_buf, images_path, IDX_IMAGES_MAGIC, 3)
    need = 16 + n * rows * cols
    if len(img_buf) < need:
        raise IdxTruncatedError(
            f"{images_path} holds {len(img_buf)} bytes, header announces {need}"
        )
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * rows * cols, offset=16)

    lbl_buf = _read_bytes(labels_path)
    (n_labels,) = _idx_header(lbl_buf, labels_path, IDX_LABELS_MAGIC, 1)
    if len(lbl_buf) < 8 + n_labels:
        raise IdxTruncatedError(
            f"{labels_path} holds {len(lbl_buf)} bytes, header announces {8 + n_labels}"
        )
    if n_labels != n:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, count=n, offset=8)

    images = torch.from_numpy(pixels.reshape(n, 1, rows, cols).astype(np.float64) / 255.0)
    logger.info("loaded %d %dx%d images from %s", n, rows, cols, images_path)
    return DatasetHandle(
        kind="idx-images",
        inputs=images,
        labels=torch.from_numpy(labels.astype(np.int64)),
        input_shape=(1, rows, cols),
        n_classes=n_classes,
        source=str(images_path),
    )


def load_cifar_batch(paths: Union[str, os.PathLike, Sequence]) -> DatasetHandle:
    """Load one or more CIFAR-10 binary batches (label byte + 3072 pixel bytes per record)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        buf = _read_bytes(path)
        if len(buf) == 0 or len(buf) % CIFAR_RECORD:
            raise CifarFormatError(
                f"{path} holds {len(buf)} bytes, not a multiple of {CIFAR_RECORD}"
            )
        records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    return DatasetHandle(
        kind="cifar",
        inputs=torch.from_numpy(np.concatenate(images)),
        labels=torch.from_numpy(np.concatenate(labels)),
        input_shape=(3, 32, 32),
        n_classes=10,
        source=",".join(str(p) for p in paths),
    )


def encode_static(image: torch.Tensor, n_steps: int) -> torch.Tensor:
    """Constant input current: the pixel value at every step."""
    image = torch.as_tensor(image, dtype=torch.float64)
    return image.unsqueeze(-1).expand(*image.shape, n_steps).clone()


# ---------------------------------------------------------------------------
# event data
# ---------------------------------------------------------------------------


def _read_aer(buf: bytes, path) -> EventStream:
    usable = len(buf) - len(buf) % AER_RECORD
    if usable != len(buf):
        raise EventParseError(f"{path}: incomplete 40-bit event record", offset=usable)
    raw = np.frombuffer(buf, dtype=np.uint8).astype(np.int64)
    x = raw[0::5]
    y = raw[1::5]
    p = raw[2::5] >> 7
    t = ((raw[2::5] << 16) | (raw[3::5] << 8) | raw[4::5]) & 0x7FFFFF
    return EventStream(x, y, p, t)


def _read_text_events(buf: bytes, path) -> EventStream:
    records = []
    offset = 0
    for line in buf.splitlines(keepends=True):
        text = line.strip()
        if text and not text.startswith(b"#"):
            fields = text.split()
            try:
                if len(fields) != 4:
                    raise ValueError
                x, y, p, t = (int(v) for v in fields)
            except ValueError:
                raise EventParseError(
                    f"{path}: expected 'x y p t', got {text.decode(errors='replace')!r}",
                    offset=offset,
                )
            if p not in (0, 1) or t < 0 or x < 0 or y < 0:
                raise EventParseError(f"{path}: out-of-range event field", offset=offset)
            records.append((x, y, p, t))
        offset += len(line)
    return EventStream.from_records(records)


def read_events(path: Union[str, os.PathLike]) -> EventStream:
    """
    Read an event file.

    ``.txt``/``.csv`` files hold one ``x y p t`` record per line. Anything else
    is read as 40-bit binary records: 8-bit x, 8-bit y, 1-bit polarity and a
    23-bit timestamp in microseconds.
    """
    buf = _read_bytes(path)
    if pathlib.Path(str(path)).suffix.lower() in (".txt", ".csv"):
        return _read_text_events(buf.replace(b",", b" "), path)
    return _read_aer(buf, path)


def bin_events(
    events: Union[EventStream, Iterable[Sequence[int]]],
    n_steps: int,
    window: float,
    sensor_shape: Sequence[int] = (34, 34),
) -> torch.Tensor:
    """
    Bin events into a binary ``[2, height, width, n_steps]`` raster.

    Event time ``t`` lands in step ``floor(t / (window / n_steps))``, clipped to
    the last step. Several events in one bin saturate to a single spike.
    """
    if not isinstance(events, EventStream):
        events = EventStream.from_records(events)
    if n_steps < 1 or not window > 0:
        raise ConfigurationError("n_steps must be >= 1 and window > 0")
    height, width = sensor_shape
    raster = torch.zeros(2, height, width, n_steps, dtype=torch.float64)
    if len(events) == 0:
        return raster
    if (events.t < 0).any():
        raise ConfigurationError("event timestamps must be >= 0")
    if (events.x >= width).any() or (events.y >= height).any():
        raise ConfigurationError(f"events fall outside a {height}x{width} sensor")
    bin_width = window / n_steps
    steps = np.minimum(np.floor(events.t / bin_width).astype(np.int64), n_steps - 1)
    index = [torch.from_numpy(np.asarray(v, dtype=np.int64)) for v in (events.p, events.y, events.x, steps)]
    raster[tuple(index)] = 1.0
    return raster


def events_to_psc(
    events: Union[EventStream, Iterable[Sequence[int]]],
    n_steps: int,
    window: float,
    tau: float,
    sensor_shape: Sequence[int] = (34, 34),
) -> torch.Tensor:
    return psc_filter(bin_events(events, n_steps, window, sensor_shape), tau)


def load_event_dir(
    root: Union[str, os.PathLike],
    n_steps: int,
    window: float,
    tau: float,
    sensor_shape: Sequence[int] = (34, 34),
    n_classes: int = 10,
) -> DatasetHandle:
    """Load ``<root>/<label>/*`` event files (N-MNIST layout) as input PSC series."""
    root = pathlib.Path(root)
    files = sorted(
        (int(d.name), f)
        for d in root.iterdir()
        if d.is_dir() and d.name.isdigit()
        for f in sorted(d.iterdir())
        if f.is_file()
    )
    if not files:
        raise ConfigurationError(f"no event files under {root}/<label>/")
    inputs = torch.stack(
        [events_to_psc(read_events(f), n_steps, window, tau, sensor_shape) for _, f in files]
    )
    labels = torch.tensor([label for label, _ in files], dtype=torch.long)
    logger.info("binned %d event files from %s", len(files), root)
    return DatasetHandle(
        kind="event-bins",
        inputs=inputs,
        labels=labels,
        input_shape=(2, *sensor_shape),
        n_classes=n_classes,
        n_steps=n_steps,
        source=str(root),
    )


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def synthetic_dataset(
    n_samples: int,
    input_shape: Sequence[int],
    n_classes: int,
    n_steps: int,
    seed: int = 0,
    rate: float = 0.3,
    tau: float = 3.0,
) -> DatasetHandle:
    """Fixed random spike trains filtered to PSCs; sample ``i`` has label ``i % n_classes``."""
    generator = torch.Generator().manual_seed(seed)
    shape = (n_samples, *input_shape, n_steps)
    raster = (torch.rand(shape, generator=generator, dtype=torch.float64) < rate).to(
        torch.float64
    )
    return DatasetHandle(
        kind="synthetic",
        inputs=psc_filter(raster, tau),
        labels=torch.arange(n_samples, dtype=torch.long) % n_classes,
        input_shape=tuple(input_shape),
        n_classes=n_classes,
        n_steps=n_steps,
        seed=seed,
        source="synthetic",
    )


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def make_batches(
    handle: DatasetHandle, batch_size: int, seed: int, epoch: int = 0
) -> list:
    """Shuffled index batches for one epoch. The last partial batch is kept."""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(handle))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def load_batch(
    handle: DatasetHandle,
    indices: Sequence[int],
    n_steps: int,
    input_shape: Optional[Sequence[int]] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Input PSCs ``[B, *input_shape, n_steps]`` and labels for `indices`.

    A flat `input_shape` (or any shape with the same number of elements)
    reshapes the per-sample data, e.g. 28x28 images for a 784-input network.
    """
    idx = torch.as_tensor(np.asarray(indices, dtype=np.int64))
    x = handle.inputs[idx]
    if handle.n_steps is None:
        x = encode_static(x, n_steps)
    elif handle.n_steps != n_steps:
        raise ConfigurationError(
            f"dataset was binned to {handle.n_steps} steps, network runs {n_steps}"
        )
    if input_shape is not None and tuple(input_shape) != tuple(handle.input_shape):
        if math.prod(input_shape) != math.prod(handle.input_shape):
            raise ConfigurationError(
                f"network input {tuple(input_shape)} does not fit samples of shape "
                f"{tuple(handle.input_shape)}"
            )
        x = x.reshape(len(idx), *input_shape, n_steps)
    return x, handle.labels[idx]


def prefetch(
    handle: DatasetHandle,
    batches: Sequence,
    n_steps: int,
    input_shape: Optional[Sequence[int]] = None,
) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    """Yield loaded batches, preparing the next one on a background thread."""
    if not batches:
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = pool.submit(load_batch, handle, batches[0], n_steps, input_shape)
        for nxt in list(batches[1:]) + [None]:
            batch = pending.result()
            if nxt is not None:
                pending = pool.submit(load_batch, handle, nxt, n_steps, input_shape)
            yield batch


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

_IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_CIFAR_NAMES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


def _find(root: pathlib.Path, name: str) -> Optional[pathlib.Path]:
    for candidate in (root / name, root / f"{name}.gz"):
        if candidate.exists():
            return candidate
    return None


def open_dataset(
    path: Union[str, os.PathLike],
    split: str = "test",
    n_steps: int = 5,
    window: float = 300_000.0,
    tau: float = 3.0,
    sensor_shape: Sequence[int] = (34, 34),
) -> DatasetHandle:
    """
    Open a dataset directory by its layout.

    Recognized are MNIST-style IDX files (``train-*``/``t10k-*``), CIFAR-10
    binary batches, and event directories (``<split>/<label>/*`` or
    ``<label>/*``).
    """
    root = pathlib.Path(path)
    if not root.is_dir():
        raise ConfigurationError(f"{root} is not a directory")
    images, labels = (_find(root, n) for n in _IDX_NAMES[split])
    if images and labels:
        return load_idx(images, labels)
    cifar = [root / n for n in _CIFAR_NAMES[split] if (root / n).exists()]
    if cifar:
        return load_cifar_batch(cifar)
    event_root = root / split if (root / split).is_dir() else root
    if any(d.is_dir() and d.name.isdigit() for d in event_root.iterdir()):
        return load_event_dir(event_root, n_steps, window, tau, sensor_shape)
    raise ConfigurationError(f"no recognizable {split} data in {root}")


def load_reference_data(path: str, keep_columns: Optional[list] = None) -> pd.DataFrame:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".parquet":
        df = pd.read_parquet(path)
    elif ext == ".csv":
        df = pd.read_csv(path)
    else:
        raise ValueError(f"Unsupported file extension: {ext}")

    if keep_columns is not None:
        df = df[keep_columns]

    return df
