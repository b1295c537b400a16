# vim: set fileencoding=utf-8 :

"""Unit Tests
"""

# Standard Library
from __future__ import absolute_import, division, print_function

# Third-party
import numpy as np
import pytest

# Local/library specific
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.hamiltonian import v1 as pmp_hamiltonian
from pmptrain.maximizer import v1 as pmp_maximizer
from pmptrain.propagation import v1 as pmp_propagation
from pmptrain.utils import v1 as pmp_utils


def _concave(theta):
    # maximum 0 at (1, -2)
    diff = theta - np.array([1.0, -2.0])
    scale = np.array([1.0, 10.0])
    return -float(np.sum(scale * diff * diff)), -2.0 * scale * diff


def test_ascend_concave_quadratic():
    # GIVEN a concave quadratic and a generous iteration budget
    config = pmp_maximizer.AscentConfig(max_iters=50)
    # WHEN it is maximized from the origin
    theta, value, status = pmp_maximizer.lbfgs_ascend(_concave,
                                                      np.zeros(2), config)
    # THEN the maximizer should be found
    assert status == pmp_maximizer.CONVERGED
    assert np.allclose(theta, [1.0, -2.0], atol=1e-6)
    assert value > -1e-10


def test_ascend_never_decreases():
    # GIVEN a single iteration budget
    config = pmp_maximizer.AscentConfig(max_iters=1)
    start_value, _ = _concave(np.zeros(2))
    # WHEN one step is taken
    _, value, status = pmp_maximizer.lbfgs_ascend(_concave, np.zeros(2),
                                                  config)
    # THEN the value should not be below the starting value
    assert value >= start_value
    assert status == pmp_maximizer.ITER_LIMIT


def test_ascend_zero_gradient_returns_start():
    # GIVEN a starting point at the maximum
    start = np.array([1.0, -2.0])
    # WHEN it is maximized
    theta, _, status = pmp_maximizer.lbfgs_ascend(_concave, start)
    # THEN the start should be returned unchanged
    assert status == pmp_maximizer.CONVERGED
    assert np.array_equal(theta, start)


def test_ascend_stalls_without_moving():
    # GIVEN an objective whose reported gradient points downhill
    def misleading(theta):
        return -float(np.dot(theta, theta)), np.ones_like(theta)

    start = np.array([0.0, 0.0])
    config = pmp_maximizer.AscentConfig(max_backtracks=5)
    # WHEN it is maximized
    theta, value, status = pmp_maximizer.lbfgs_ascend(misleading, start,
                                                      config)
    # THEN the line search should stall and keep the start
    assert status == pmp_maximizer.LINE_SEARCH_STALLED
    assert np.array_equal(theta, start)
    assert value == 0.0


def test_ascend_treats_numeric_errors_as_backtracks():
    # GIVEN an objective that fails far from the origin
    def guarded(theta):
        if np.linalg.norm(theta) > 0.5:
            raise pmp_utils.NumericError("overflow")
        return -float(np.sum((theta - 0.1) ** 2)), -2.0 * (theta - 0.1)

    # WHEN it is maximized
    theta, value, _ = pmp_maximizer.lbfgs_ascend(guarded, np.zeros(2))
    # THEN the result should stay in the safe region and improve the value
    assert np.linalg.norm(theta) <= 0.5
    assert value > -0.02


def test_ascend_rejects_non_finite_start():
    # GIVEN an objective that is NaN at the start
    def broken(theta):
        return np.nan, np.zeros_like(theta)

    # WHEN it is maximized
    # THEN NumericError should be raised
    with pytest.raises(pmp_utils.NumericError):
        pmp_maximizer.lbfgs_ascend(broken, np.zeros(2))


@pytest.mark.parametrize("kwargs", [
    dict(max_iters=0), dict(memory=0), dict(armijo_c=1.0),
    dict(backtrack_factor=0.0), dict(grad_tol=-1.0), dict(max_backtracks=0),
])
def test_ascent_config_rejects(kwargs):
    # GIVEN an invalid ascent setting
    # WHEN an AscentConfig is built
    # THEN RejectedInputError should be raised
    with pytest.raises(pmp_utils.RejectedInputError):
        pmp_maximizer.AscentConfig(**kwargs)


def test_maximize_layer_increases_augmented_hamiltonian(sine_net):
    # GIVEN the contexts of a small network
    spec, params, batch = sine_net
    traj = pmp_propagation.forward_propagate(spec, params, batch)
    costates = pmp_propagation.backward_propagate(spec, params, traj,
                                                  batch.targets)
    ctxs = pmp_hamiltonian.build_contexts(spec, params, traj, costates, 1.0)
    # WHEN every layer is maximized
    for ctx, theta_k in zip(ctxs, params):
        theta = pmp_maximizer.maximize_layer(ctx, theta_k)
        # THEN the augmented Hamiltonian should not decrease
        assert pmp_hamiltonian.augmented_hamiltonian(ctx, theta) >= \
            pmp_hamiltonian.augmented_hamiltonian(ctx, theta_k)
        assert theta.shape == theta_k.shape
        assert isinstance(theta, np.ndarray)
    assert isinstance(params, pmp_dynamics.ParamStack)


def test_maximize_layer_steps_shrink_with_rho(sine_net):
    # GIVEN the contexts of a small network at theta^k
    spec, params, batch = sine_net
    traj = pmp_propagation.forward_propagate(spec, params, batch)
    costates = pmp_propagation.backward_propagate(spec, params, traj,
                                                  batch.targets)
    ctx = pmp_hamiltonian.build_contexts(spec, params, traj, costates,
                                         1.0)[1]
    config = pmp_maximizer.AscentConfig(max_iters=50)
    # WHEN the layer is maximized for growing rho
    steps = [np.linalg.norm(pmp_maximizer.maximize_layer(
        ctx.with_rho(rho), params[1], config) - params[1])
        for rho in (1e2, 1e4, 1e6, 1e8)]
    # THEN the update should shrink towards theta^k
    assert steps[0] > 0.0
    for larger, smaller in zip(steps, steps[1:]):
        assert smaller <= larger
    assert steps[-1] <= 1e-3 * steps[0]


def test_maximize_layer_rho_zero_closed_form():
    # GIVEN an affine layer with regularizer 0.5 |theta|^2, whose
    #       Hamiltonian is concave with maximizer grad_theta(p) / (2 * 0.5)
    layer = pmp_dynamics.LayerSpec(pmp_dynamics.CLASSIFIER, 3, 2)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 3))
    p_next = rng.normal(size=(4, 2))
    ctx = pmp_hamiltonian.LayerContext(
        0, layer, x, p_next, rng.normal(size=(4, 2)),
        rng.normal(size=(4, 3)), 0.0, 0.5)
    theta_k = np.zeros(layer.num_params)
    expected = pmp_dynamics.layer_grad_theta(layer, x, theta_k, p_next)
    # WHEN the layer is maximized with rho = 0
    theta = pmp_maximizer.maximize_layer(ctx, theta_k)
    # THEN it should land on the closed-form maximizer
    assert np.allclose(theta, expected, rtol=0, atol=1e-8)
