import numpy as np
import pytest
import torch

from tssl_snn import (
    CifarFormatError,
    ConfigurationError,
    CountMismatchError,
    EventParseError,
    IdxMagicError,
    IdxTruncatedError,
    bin_events,
    load_batch,
    load_cifar_batch,
    load_event_dir,
    load_idx,
    make_batches,
    open_dataset,
    prefetch,
    read_events,
    synthetic_dataset,
)

from .utils import aer_bytes, write_cifar, write_idx


def _images(n=4, rows=3, cols=2):
    return np.arange(n * rows * cols, dtype=np.uint8).reshape(n, rows, cols) * 10


@pytest.mark.parametrize("compress", [False, True])
def test_load_idx(tmp_path, compress):
    images = _images()
    labels = np.array([3, 1, 4, 1])
    img_path, lbl_path = write_idx(tmp_path, "train", images, labels, compress=compress)
    data = load_idx(img_path, lbl_path)
    assert len(data) == 4
    assert data.input_shape == (1, 3, 2)
    assert data.inputs.shape == (4, 1, 3, 2)
    assert data.labels.tolist() == [3, 1, 4, 1]
    assert float(data.inputs[1, 0, 0, 0]) == pytest.approx(images[1, 0, 0] / 255.0)


def test_idx_errors(tmp_path):
    img_path, lbl_path = write_idx(tmp_path, "train", _images(), np.array([0, 1, 2, 3]))
    with pytest.raises(IdxMagicError):
        load_idx(lbl_path, lbl_path)

    truncated = tmp_path / "short-images"
    truncated.write_bytes(img_path.read_bytes()[:-1])
    with pytest.raises(IdxTruncatedError):
        load_idx(truncated, lbl_path)

    _, few_labels = write_idx(tmp_path / "few", "train", _images(n=3), np.array([0, 1, 2]))
    with pytest.raises(CountMismatchError):
        load_idx(img_path, few_labels)


def test_load_cifar(tmp_path):
    pixels = write_cifar(tmp_path / "data_batch_1.bin", [7, 2])
    data = load_cifar_batch(tmp_path / "data_batch_1.bin")
    assert data.input_shape == (3, 32, 32)
    assert data.labels.tolist() == [7, 2]
    assert float(data.inputs[1, 0, 0, 1]) == pytest.approx(pixels[1, 1] / 255.0)

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\x00" * 100)
    with pytest.raises(CifarFormatError):
        load_cifar_batch(bad)


def test_read_binary_events(tmp_path):
    events = [(3, 4, 1, 70000), (0, 33, 0, 5)]
    path = tmp_path / "sample.bin"
    path.write_bytes(aer_bytes(events))
    stream = read_events(path)
    assert len(stream) == 2
    assert stream.x.tolist() == [3, 0]
    assert stream.y.tolist() == [4, 33]
    assert stream.p.tolist() == [1, 0]
    assert stream.t.tolist() == [70000, 5]

    path.write_bytes(aer_bytes(events) + b"\x01\x02")
    with pytest.raises(EventParseError) as err:
        read_events(path)
    assert err.value.offset == 10


def test_read_text_events(tmp_path):
    path = tmp_path / "sample.txt"
    path.write_text("# x y p t\n1 2 0 10\n\n3 4 1 20\n")
    stream = read_events(path)
    assert stream.t.tolist() == [10, 20]

    path.write_text("1 2 0 10\n1 2 x 10\n")
    with pytest.raises(EventParseError) as err:
        read_events(path)
    assert err.value.offset == len("1 2 0 10\n")

    path.write_text("1 2 3 10\n")
    with pytest.raises(EventParseError):
        read_events(path)


def test_bin_events():
    events = [(0, 0, 1, 0), (1, 2, 0, 150), (1, 2, 0, 160), (3, 3, 1, 1000)]
    raster = bin_events(events, n_steps=3, window=300.0, sensor_shape=(4, 4))
    assert raster.shape == (2, 4, 4, 3)
    assert float(raster.sum()) == 3.0
    assert raster[1, 0, 0, 0] == 1.0
    # two events in one bin saturate to a single spike
    assert raster[0, 2, 1, 1] == 1.0
    # late events land in the last step
    assert raster[1, 3, 3, 2] == 1.0

    assert bin_events([], n_steps=3, window=300.0).sum() == 0
    with pytest.raises(ConfigurationError):
        bin_events([(5, 0, 0, 0)], n_steps=3, window=300.0, sensor_shape=(4, 4))


def test_load_event_dir(tmp_path):
    for label, t in ((0, 10), (1, 20), (1, 250)):
        folder = tmp_path / str(label)
        folder.mkdir(exist_ok=True)
        (folder / f"{t}.txt").write_text(f"1 1 0 {t}\n")
    data = load_event_dir(tmp_path, n_steps=3, window=300.0, tau=2.0, sensor_shape=(2, 2))
    assert data.labels.tolist() == [0, 1, 1]
    assert data.inputs.shape == (3, 2, 2, 2, 3)
    assert data.n_steps == 3
    # a spike in the first step decays with the PSC kernel
    assert data.inputs[0, 0, 1, 1].tolist() == pytest.approx([1.0, 0.5, 0.25])


def test_open_dataset(tmp_path):
    write_idx(tmp_path, "train", _images(), np.array([0, 1, 2, 3]))
    write_idx(tmp_path, "t10k", _images(n=2), np.array([5, 6]))
    assert open_dataset(tmp_path, "test").labels.tolist() == [5, 6]
    assert len(open_dataset(tmp_path, "train")) == 4

    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ConfigurationError):
        open_dataset(empty)


def test_synthetic_dataset_is_seeded():
    a = synthetic_dataset(7, (5,), 3, 4, seed=2)
    b = synthetic_dataset(7, (5,), 3, 4, seed=2)
    assert torch.equal(a.inputs, b.inputs)
    assert a.labels.tolist() == [0, 1, 2, 0, 1, 2, 0]
    assert a.inputs.shape == (7, 5, 4)


def test_subset_and_head():
    data = synthetic_dataset(10, (2,), 5, 3)
    sub = data.subset(4, seed=1)
    again = data.subset(4, seed=1)
    assert sub.indices == again.indices
    assert len(set(sub.indices)) == 4
    assert torch.equal(sub.inputs, data.inputs[sub.indices])
    assert data.subset(None) is data

    head = data.head(3)
    assert head.indices == [0, 1, 2]
    assert torch.equal(head.labels, data.labels[:3])


def test_make_batches():
    data = synthetic_dataset(10, (2,), 5, 3)
    batches = make_batches(data, 4, seed=0, epoch=1)
    assert [len(b) for b in batches] == [4, 4, 2]
    assert sorted(np.concatenate(batches).tolist()) == list(range(10))
    same = make_batches(data, 4, seed=0, epoch=1)
    assert all((x == y).all() for x, y in zip(batches, same))
    other = make_batches(data, 4, seed=0, epoch=2)
    assert not all((x == y).all() for x, y in zip(batches, other))
    with pytest.raises(ConfigurationError):
        make_batches(data, 0, seed=0)


def test_load_batch_encodes_static_images(tmp_path):
    img_path, lbl_path = write_idx(tmp_path, "train", _images(n=3, rows=2, cols=2), np.array([0, 1, 2]))
    data = load_idx(img_path, lbl_path)
    x, labels = load_batch(data, [2, 0], n_steps=4)
    assert x.shape == (2, 1, 2, 2, 4)
    assert labels.tolist() == [2, 0]
    assert torch.equal(x[..., 0], x[..., 3])

    flat, _ = load_batch(data, [2, 0], n_steps=4, input_shape=(4,))
    assert flat.shape == (2, 4, 4)
    with pytest.raises(ConfigurationError):
        load_batch(data, [0], n_steps=4, input_shape=(5,))


def test_load_batch_checks_binned_steps():
    data = synthetic_dataset(4, (2,), 2, 3)
    with pytest.raises(ConfigurationError):
        load_batch(data, [0], n_steps=5)


def test_prefetch_matches_load_batch():
    data = synthetic_dataset(9, (3,), 3, 4)
    batches = make_batches(data, 4, seed=0)
    streamed = list(prefetch(data, batches, 4))
    assert len(streamed) == 3
    for (x, y), idx in zip(streamed, batches):
        ex, ey = load_batch(data, idx, 4)
        assert torch.equal(x, ex) and torch.equal(y, ey)
