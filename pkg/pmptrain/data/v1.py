# vim: set fileencoding=utf-8 :

"""PMPTrain datasets: sine regression, IDX (MNIST-style) files, input lifting
and mini-batch sampling.
"""

# Standard library
from __future__ import absolute_import, division, print_function
from collections import OrderedDict
import gzip
import logging
import struct

# Third-party
import numpy as np

# Local/library specific
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGES = "images"
LABELS = "labels"
PIXEL_SCALE = 255.0
MNIST_VALIDATION_SIZE = 5000


class Dataset(object):
    """Inputs (samples x raw_dim) with regression targets or class indices.

    metadata records the name and any normalization applied.
    """

    def __init__(self, inputs, targets, name, normalization=None):
        inputs = np.asarray(inputs, dtype=pmp_dynamics.DTYPE)
        targets = np.asarray(targets)
        if inputs.ndim != 2:
            raise pmp_utils.RejectedInputError(
                "inputs must be samples x dim, got shape {0}"
                .format(inputs.shape))
        if targets.shape != (inputs.shape[0],):
            raise pmp_utils.RejectedInputError(
                "{0} inputs but targets of shape {1}"
                .format(inputs.shape[0], targets.shape))
        pmp_utils.check_finite(inputs, "dataset inputs")
        pmp_utils.check_finite(targets, "dataset targets")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        self.inputs = inputs
        self.targets = targets
        self.metadata = OrderedDict([("name", name),
                                     ("normalization", normalization)])

    @property
    def name(self):
        return self.metadata["name"]

    @property
    def size(self):
        return self.inputs.shape[0]

    def __len__(self):
        return self.size

    @property
    def is_classification(self):
        return np.issubdtype(self.targets.dtype, np.integer)

    def batch(self, index=None):
        if index is None:
            return pmp_dynamics.Batch(self.inputs, self.targets)
        return pmp_dynamics.Batch(self.inputs[index], self.targets[index])

    def subset(self, index, name=None):
        return Dataset(self.inputs[index], self.targets[index],
                       name or self.name, self.metadata["normalization"])

    def head(self, count):
        return self.subset(slice(0, count))

    def with_inputs(self, inputs):
        return Dataset(inputs, self.targets, self.name,
                       self.metadata["normalization"])

    def describe(self):
        info = OrderedDict(self.metadata)
        info["samples"] = self.size
        info["input_dim"] = self.inputs.shape[1]
        if self.size:
            info["input_min"] = float(self.inputs.min())
            info["input_max"] = float(self.inputs.max())
        if self.is_classification:
            info["targets"] = "class indices"
            classes, counts = np.unique(self.targets, return_counts=True)
            info["class_histogram"] = OrderedDict(
                (int(c), int(k)) for c, k in zip(classes, counts))
        else:
            info["targets"] = "real"
            if self.size:
                info["target_min"] = float(self.targets.min())
                info["target_max"] = float(self.targets.max())
        return info


def sine_dataset(n, seed, low=-np.pi, high=np.pi):
    """n inputs drawn uniformly from [low, high] with targets sin(x).
    """
    if int(n) != n or n < 1:
        raise pmp_utils.RejectedInputError(
            "sine dataset needs n >= 1, got {0}".format(n))
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=int(n))
    return Dataset(x[:, None], np.sin(x), "sine")


def lift_input(x, d):
    """Repeat each scalar input d times: (samples,) or (samples, 1) ->
    (samples, d).
    """
    if int(d) != d or d < 1:
        raise pmp_utils.RejectedInputError(
            "lift dimension must be >= 1, got {0}".format(d))
    x = np.asarray(x, dtype=pmp_dynamics.DTYPE)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != 1:
        raise pmp_utils.RejectedInputError(
            "lifting needs scalar inputs, got shape {0}".format(x.shape))
    return np.repeat(x, int(d), axis=1)


class IdxArray(object):
    """Parsed IDX file. images: float64 (count x rows*cols) in [0, 1];
    labels: int64 (count,). dims holds the header dimensions.
    """

    def __init__(self, kind, data, dims):
        self.kind = kind
        self.data = data
        self.dims = dims

    @property
    def count(self):
        return self.dims[0]


def idx_parse(raw):
    """Parse an IDX images (magic 0x803) or labels (magic 0x801) stream.

    Errors name the byte offset: 0 for a bad magic number, the first missing
    byte for a short header or payload, the first unexpected byte for
    trailing data.
    """
    raw = bytes(raw)
    if len(raw) < 4:
        raise pmp_utils.ParseError("truncated IDX magic number", len(raw))
    magic, = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES_MAGIC:
        kind, n_dims = IMAGES, 3
    elif magic == IDX_LABELS_MAGIC:
        kind, n_dims = LABELS, 1
    else:
        raise pmp_utils.ParseError(
            "bad IDX magic number 0x{0:08x}".format(magic), 0)
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise pmp_utils.ParseError("truncated IDX header", len(raw))
    dims = struct.unpack(">{0}I".format(n_dims), raw[4:header_len])
    payload_len = int(np.prod(dims, dtype=np.int64))
    end = header_len + payload_len
    if len(raw) < end:
        raise pmp_utils.ParseError(
            "truncated IDX payload: header declares {0} bytes"
            .format(payload_len), len(raw))
    if len(raw) > end:
        raise pmp_utils.ParseError(
            "{0} unexpected bytes after IDX payload".format(len(raw) - end),
            end)
    data = np.frombuffer(raw, dtype=np.uint8, count=payload_len,
                         offset=header_len)
    if kind == IMAGES:
        data = data.reshape(dims[0], dims[1] * dims[2]) / PIXEL_SCALE
    else:
        data = data.astype(np.int64)
    LOG.debug("Parsed IDX {0} with dims {1}".format(kind, dims))
    return IdxArray(kind, data, dims)


def read_idx(path):
    """Read and parse an IDX file; paths ending in .gz are decompressed.
    """
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as idx_fo:
        return idx_parse(idx_fo.read())


def idx_dataset(images, labels, name):
    """Dataset from parsed images and labels of equal count.
    """
    if images.kind != IMAGES or labels.kind != LABELS:
        raise pmp_utils.RejectedInputError(
            "expected an images and a labels IDX array, got {0} and {1}"
            .format(images.kind, labels.kind))
    if images.count != labels.count:
        # offset of the count field in the labels header
        raise pmp_utils.ParseError(
            "labels count {0} does not match images count {1}"
            .format(labels.count, images.count), 4)
    return Dataset(images.data, labels.data, name,
                   "pixels/{0:g} to [0, 1]".format(PIXEL_SCALE))


def load_idx_pair(images_path, labels_path, name):
    LOG.info("Loading {0} from {1} and {2}"
             .format(name, images_path, labels_path))
    return idx_dataset(read_idx(images_path), read_idx(labels_path), name)


def mnist_split(dataset, validation_size=MNIST_VALIDATION_SIZE):
    """Split off the first validation_size samples: (train, validation).
    60000 MNIST training images give 55000/5000.
    """
    if not 0 <= validation_size < dataset.size:
        raise pmp_utils.RejectedInputError(
            "cannot hold out {0} of {1} samples"
            .format(validation_size, dataset.size))
    validation = dataset.subset(slice(0, validation_size),
                                "{0}-validation".format(dataset.name))
    train = dataset.subset(slice(validation_size, dataset.size),
                           "{0}-train".format(dataset.name))
    return train, validation


def minibatch_iter(dataset, batch_size, seed, epochs=None):
    """Yield Batches: per epoch a seeded shuffle split into contiguous
    batches, the last one possibly short. Runs forever when epochs is None.
    """
    n = dataset.size
    if n == 0:
        raise pmp_utils.RejectedInputError("cannot sample an empty dataset")
    if batch_size == "full":
        batch_size = n
    if int(batch_size) != batch_size or not 1 <= batch_size <= n:
        raise pmp_utils.RejectedInputError(
            "batch size must lie in [1, {0}], got {1}".format(n, batch_size))
    batch_size = int(batch_size)
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield dataset.batch(order[start:start + batch_size])
        epoch += 1
