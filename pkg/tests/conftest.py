# vim: set fileencoding=utf-8 :

"""Shared fixtures
"""

# Standard Library
from __future__ import absolute_import, division, print_function
import struct

# Third-party
import numpy as np
import pytest

# Local/library specific
from pmptrain.data import v1 as pmp_data
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.solvers import v1 as pmp_solvers


def idx_bytes(array, labels=False):
    """Serialize uint8 images (count x rows x cols) or labels (count,) as an
    IDX stream.
    """
    array = np.asarray(array, dtype=np.uint8)
    if labels:
        header = struct.pack(">II", pmp_data.IDX_LABELS_MAGIC, array.shape[0])
    else:
        header = struct.pack(">IIII", pmp_data.IDX_IMAGES_MAGIC,
                             *array.shape)
    return header + array.tobytes()


def sine_spec(layers=3, dim=2, delta=0.5, activation=pmp_dynamics.TANH,
              regularizer_weight=0.0):
    return pmp_dynamics.NetworkSpec(
        [pmp_dynamics.LayerSpec(pmp_dynamics.RESIDUAL_DENSE, dim, dim, delta,
                                activation) for _ in range(layers)],
        pmp_dynamics.SUM_SQUARED, regularizer_weight)


def sine_batch(samples=8, dim=2, seed=0):
    dataset = pmp_data.sine_dataset(samples, seed)
    return pmp_dynamics.Batch(pmp_data.lift_input(dataset.inputs, dim),
                              dataset.targets)


@pytest.fixture(scope="function")
def sine_net():
    """(spec, params, batch) of a small tanh residual network.
    """
    spec = sine_spec()
    params = pmp_solvers.initial_params(spec, seed=1)
    return spec, params, sine_batch()


@pytest.fixture(scope="function")
def classifier_net():
    """(spec, params, batch) of projection, residual and classifier layers.
    """
    spec = pmp_dynamics.NetworkSpec([
        pmp_dynamics.LayerSpec(pmp_dynamics.PROJECTION, 4, 3),
        pmp_dynamics.LayerSpec(pmp_dynamics.RESIDUAL_DENSE, 3, 3, 0.5),
        pmp_dynamics.LayerSpec(pmp_dynamics.CLASSIFIER, 3, 3),
    ], pmp_dynamics.CROSS_ENTROPY, 0.01)
    rng = np.random.default_rng(3)
    params = pmp_dynamics.ParamStack(
        spec, [rng.normal(0.0, 0.5, layer.num_params) for layer in spec])
    batch = pmp_dynamics.Batch(rng.normal(size=(6, 4)),
                               np.array([0, 1, 2, 0, 1, 2]))
    return spec, params, batch
