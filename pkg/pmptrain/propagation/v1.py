# vim: set fileencoding=utf-8 :

"""PMPTrain state and co-state propagation.
"""

# Standard library
from __future__ import absolute_import, division, print_function
import logging

# Third-party
import numpy as np

# Local/library specific
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)


def _freeze(arrays):
    frozen = list()
    for array in arrays:
        array = np.array(array, dtype=pmp_dynamics.DTYPE)
        array.setflags(write=False)
        frozen.append(array)
    return tuple(frozen)


class StateTrajectory(object):
    """States x_0 ... x_N of a batch, stored for every layer boundary.
    """

    def __init__(self, states):
        self.states = _freeze(states)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, n):
        return self.states[n]

    def __iter__(self):
        return iter(self.states)

    @property
    def final(self):
        return self.states[-1]


class CostateTrajectory(object):
    """Co-states p_0 ... p_N of a batch. p_N = -grad Phi(x_N); p_0 is stored
    for diagnostics only.

    losses holds the per-sample terminal loss evaluated on the way.
    """

    def __init__(self, costates, losses=None):
        self.costates = _freeze(costates)
        self.losses = losses

    def __len__(self):
        return len(self.costates)

    def __getitem__(self, n):
        return self.costates[n]

    def __iter__(self):
        return iter(self.costates)


def _inputs(spec, batch):
    inputs = getattr(batch, "inputs", batch)
    inputs = np.asarray(inputs, dtype=pmp_dynamics.DTYPE)
    if inputs.ndim != 2 or inputs.shape[1] != spec.input_dim:
        raise pmp_utils.RejectedInputError(
            "network expects inputs of width {0}, got shape {1}"
            .format(spec.input_dim, inputs.shape))
    return inputs


def _check_params(spec, params):
    if len(params) != len(spec):
        raise pmp_utils.RejectedInputError(
            "parameter stack has {0} layers, network has {1}"
            .format(len(params), len(spec)))
    for n, (layer, theta) in enumerate(zip(spec, params)):
        if theta.size != layer.num_params:
            raise pmp_utils.RejectedInputError(
                "layer {0} expects {1} parameters, got {2}"
                .format(n, layer.num_params, theta.size))


def forward_propagate(spec, params, batch):
    """Run x_{n+1} = g_n(x_n, theta_n) from x_0 = batch inputs.

    batch may be a Batch or a bare (samples x dim) input array.
    """
    _check_params(spec, params)
    x = _inputs(spec, batch)
    pmp_utils.check_finite(x, "network input", 0)
    states = [x]
    for n, (layer, theta) in enumerate(zip(spec, params)):
        x = pmp_dynamics.LayerEval(layer, x, theta, n).forward()
        states.append(x)
    return StateTrajectory(states)


def backward_propagate(spec, params, traj, targets):
    """Run p_n = grad_x H_n(x_n, p_{n+1}, theta_n) from p_N = -grad Phi(x_N) / m.

    The terminal co-states carry the 1/m of the batch-mean loss, so the
    batch sum of H_n is on the scale of the mean objective J.
    """
    _check_params(spec, params)
    if len(traj) != len(spec) + 1:
        raise pmp_utils.RejectedInputError(
            "trajectory has {0} states, network needs {1}"
            .format(len(traj), len(spec) + 1))
    losses, grads = pmp_dynamics.terminal_loss(spec, traj.final, targets)
    p = -grads / max(len(grads), 1)
    costates = [None] * len(traj)
    costates[-1] = p
    for n in range(len(spec) - 1, -1, -1):
        p = pmp_dynamics.layer_pullback_x(spec[n], traj[n], params[n], p)
        costates[n] = pmp_utils.check_finite(p, "costate", n)
    return CostateTrajectory(costates, losses)


def spectral_norm(matrix, iters=50, tol=1e-8, seed=0):
    """Estimate the largest singular value by power iteration on M^T M from
    a fixed-seed start vector. A converged estimate never exceeds the true
    value; without convergence after iters steps the exact 2-norm is returned.
    """
    matrix = np.asarray(matrix, dtype=pmp_dynamics.DTYPE)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(matrix.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        w = np.matmul(matrix.T, np.matmul(matrix, v))
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        estimate = float(np.linalg.norm(np.matmul(matrix, v)))
        if abs(estimate - sigma) <= tol * max(estimate, 1.0):
            return estimate
        sigma = estimate
    LOG.debug("power iteration unconverged after {0} steps ({1:.6e}),"
              " using the exact norm".format(iters, sigma))
    return float(np.linalg.norm(matrix, 2))
