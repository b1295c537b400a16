# vim: set fileencoding=utf-8 :

"""Unit Tests
"""

# Standard Library
from __future__ import absolute_import, division, print_function
import gzip
import os.path

# Third-party
import numpy as np
import pytest

# Local/library specific
from conftest import idx_bytes
from pmptrain.data import v1 as pmp_data
from pmptrain.utils import v1 as pmp_utils

IMAGES = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3) * 10
LABELS = np.array([7, 1], dtype=np.uint8)


def test_sine_dataset_seeded():
    # GIVEN two draws with the same seed and one with another
    first = pmp_data.sine_dataset(50, seed=4)
    second = pmp_data.sine_dataset(50, seed=4)
    other = pmp_data.sine_dataset(50, seed=5)
    # WHEN they are compared
    # THEN same seeds should match and targets should be sin(x) in range
    assert np.array_equal(first.inputs, second.inputs)
    assert not np.array_equal(first.inputs, other.inputs)
    assert np.allclose(first.targets, np.sin(first.inputs[:, 0]))
    assert first.inputs.min() >= -np.pi
    assert first.inputs.max() <= np.pi
    assert first.inputs.shape == (50, 1)
    assert not first.is_classification


def test_sine_dataset_rejects_empty():
    # GIVEN n = 0
    # WHEN a sine dataset is drawn
    # THEN RejectedInputError should be raised
    with pytest.raises(pmp_utils.RejectedInputError):
        pmp_data.sine_dataset(0, seed=0)


def test_lift_input():
    # GIVEN scalar inputs
    x = np.array([0.5, -1.0])
    # WHEN they are lifted to 5 dimensions
    lifted = pmp_data.lift_input(x, 5)
    # THEN every column should repeat the input
    assert lifted.shape == (2, 5)
    assert np.array_equal(lifted[:, 3], x)
    with pytest.raises(pmp_utils.RejectedInputError):
        pmp_data.lift_input(np.zeros((2, 2)), 3)


def test_idx_parse_images_and_labels():
    # GIVEN serialized images and labels
    # WHEN they are parsed
    images = pmp_data.idx_parse(idx_bytes(IMAGES))
    labels = pmp_data.idx_parse(idx_bytes(LABELS, labels=True))
    # THEN images should be scaled to [0, 1] and flattened and
    #      labels should be int64
    assert images.kind == pmp_data.IMAGES
    assert images.dims == (2, 3, 3)
    assert images.data.shape == (2, 9)
    assert images.data[1, 8] == 170 / 255.0
    assert labels.kind == pmp_data.LABELS
    assert labels.data.dtype == np.int64
    assert list(labels.data) == [7, 1]


@pytest.mark.parametrize("raw, offset", [
    (b"\x00\x00", 2),
    (b"\x00\x00\x08\x02" + b"\x00" * 8, 0),
    (idx_bytes(IMAGES)[:10], 10),
    (idx_bytes(IMAGES)[:-1], 33),
    (idx_bytes(IMAGES) + b"\x00", 34),
])
def test_idx_parse_errors_name_offset(raw, offset):
    # GIVEN a malformed IDX stream
    # WHEN it is parsed
    # THEN ParseError should carry the offending byte offset
    with pytest.raises(pmp_utils.ParseError) as e:
        pmp_data.idx_parse(raw)
    assert e.value.offset == offset


def test_read_idx_gzip(tmpdir):
    # GIVEN gzip-compressed and plain label files
    gz_path = os.path.join(str(tmpdir), "labels.idx1-ubyte.gz")
    plain_path = os.path.join(str(tmpdir), "labels.idx1-ubyte")
    with gzip.open(gz_path, "wb") as gz_fo:
        gz_fo.write(idx_bytes(LABELS, labels=True))
    with open(plain_path, "wb") as plain_fo:
        plain_fo.write(idx_bytes(LABELS, labels=True))
    # WHEN both are read
    # THEN they should parse identically
    assert np.array_equal(pmp_data.read_idx(gz_path).data,
                          pmp_data.read_idx(plain_path).data)


def test_idx_dataset_count_mismatch():
    # GIVEN three labels for two images
    images = pmp_data.idx_parse(idx_bytes(IMAGES))
    labels = pmp_data.idx_parse(idx_bytes(np.array([1, 2, 3]), labels=True))
    # WHEN a dataset is assembled
    # THEN ParseError should point at the labels count field
    with pytest.raises(pmp_utils.ParseError) as e:
        pmp_data.idx_dataset(images, labels, "mnist")
    assert e.value.offset == 4


def test_idx_dataset_describe():
    # GIVEN a parsed pair
    dataset = pmp_data.idx_dataset(
        pmp_data.idx_parse(idx_bytes(IMAGES)),
        pmp_data.idx_parse(idx_bytes(LABELS, labels=True)), "mnist")
    # WHEN it is described
    info = dataset.describe()
    # THEN metadata and class histogram should be reported
    assert info["name"] == "mnist"
    assert info["samples"] == 2
    assert info["input_dim"] == 9
    assert info["class_histogram"] == {1: 1, 7: 1}
    assert dataset.is_classification


def test_mnist_split():
    # GIVEN 10 samples
    dataset = pmp_data.Dataset(np.arange(20.0).reshape(10, 2),
                               np.arange(10), "mnist")
    # WHEN 3 are held out
    train, validation = pmp_data.mnist_split(dataset, 3)
    # THEN the first 3 should form the validation set
    assert validation.size == 3
    assert train.size == 7
    assert list(validation.targets) == [0, 1, 2]
    assert train.name == "mnist-train"
    with pytest.raises(pmp_utils.RejectedInputError):
        pmp_data.mnist_split(dataset, 10)


def test_minibatch_iter_covers_epoch():
    # GIVEN 10 samples and batches of 4
    dataset = pmp_data.Dataset(np.arange(10.0)[:, None], np.arange(10),
                               "toy")
    # WHEN one epoch is drawn
    batches = list(pmp_data.minibatch_iter(dataset, 4, seed=0, epochs=1))
    # THEN every sample should appear once and the last batch be short
    assert [b.size for b in batches] == [4, 4, 2]
    seen = np.concatenate([b.targets for b in batches])
    assert sorted(seen) == list(range(10))


def test_minibatch_iter_seeded():
    # GIVEN the same seed twice
    dataset = pmp_data.Dataset(np.arange(10.0)[:, None], np.arange(10),
                               "toy")
    # WHEN two epochs are drawn twice
    first = [b.targets for b in pmp_data.minibatch_iter(dataset, 3, 7, 2)]
    second = [b.targets for b in pmp_data.minibatch_iter(dataset, 3, 7, 2)]
    # THEN the order should be reproducible
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert len(first) == 8


@pytest.mark.parametrize("batch_size", [0, 11, 2.5])
def test_minibatch_iter_rejects(batch_size):
    # GIVEN an invalid batch size
    dataset = pmp_data.Dataset(np.zeros((10, 1)), np.zeros(10), "toy")
    # WHEN the first batch is drawn
    # THEN RejectedInputError should be raised
    with pytest.raises(pmp_utils.RejectedInputError):
        next(pmp_data.minibatch_iter(dataset, batch_size, 0))


def test_dataset_rejects_mismatched_targets():
    # GIVEN 3 inputs and 2 targets
    # WHEN a dataset is built
    # THEN RejectedInputError should be raised
    with pytest.raises(pmp_utils.RejectedInputError):
        pmp_data.Dataset(np.zeros((3, 2)), np.zeros(2), "bad")
