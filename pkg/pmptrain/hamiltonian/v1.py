# vim: set fileencoding=utf-8 :

"""PMPTrain per-layer Hamiltonians.

H_n(theta) = sum_batch p_{n+1} . g_n(x_n, theta) - delta L(theta)

The augmented Hamiltonian subtracts rho/2 times the squared residuals of the
state and co-state equations evaluated at theta.
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


class LayerContext(object):
    """Frozen inputs of layer n's maximization: x_n, p_{n+1}, x_{n+1}, p_n
    from the trajectories at theta^k, the layer spec, rho and the regularizer
    weight.
    """

    def __init__(self, n, layer, x_n, p_next, x_next, p_curr, rho,
                 regularizer_weight=0.0):
        if rho < 0:
            raise pmp_utils.RejectedInputError(
                "rho must be >= 0, got {0}".format(rho))
        arrays = list()
        for name, array, width in (("x_n", x_n, layer.in_dim),
                                   ("p_next", p_next, layer.out_dim),
                                   ("x_next", x_next, layer.out_dim),
                                   ("p_curr", p_curr, layer.in_dim)):
            array = np.array(array, dtype=pmp_dynamics.DTYPE)
            if array.ndim != 2 or array.shape[1] != width:
                raise pmp_utils.RejectedInputError(
                    "layer {0}: {1} must have width {2}, got shape {3}"
                    .format(n, name, width, array.shape))
            if array.shape[0] != np.shape(x_n)[0]:
                raise pmp_utils.RejectedInputError(
                    "layer {0}: {1} has {2} samples, x_n has {3}"
                    .format(n, name, array.shape[0], np.shape(x_n)[0]))
            array.setflags(write=False)
            arrays.append(array)
        self.n = n
        self.layer = layer
        self.x_n, self.p_next, self.x_next, self.p_curr = arrays
        self.rho = float(rho)
        self.regularizer_weight = float(regularizer_weight)

    def with_rho(self, rho):
        return LayerContext(self.n, self.layer, self.x_n, self.p_next,
                            self.x_next, self.p_curr, rho,
                            self.regularizer_weight)


def build_contexts(spec, params, traj, costates, rho):
    """One LayerContext per layer from trajectories generated by params.
    """
    return [LayerContext(n, spec[n], traj[n], costates[n + 1], traj[n + 1],
                         costates[n], rho, spec.regularizer_weight)
            for n in range(len(spec))]


def _evaluate(ctx, theta):
    return pmp_dynamics.LayerEval(ctx.layer, ctx.x_n, theta, ctx.n)


def _hamiltonian_terms(ctx, ev, theta):
    """(H value, layer output) at an evaluated layer.
    """
    out = ev.forward()
    reg_value, _ = pmp_dynamics.regularizer(theta, ctx.regularizer_weight)
    value = float(np.sum(ctx.p_next * out)) - ctx.layer.step * reg_value
    return value, out


def _hamiltonian_grad(ctx, ev, theta):
    _, reg_grad = pmp_dynamics.regularizer(theta, ctx.regularizer_weight)
    return ev.grad_theta(ctx.p_next) - ctx.layer.step * reg_grad


def residuals(ctx, theta):
    """State residual x_{n+1} - g_n(x_n, theta) and co-state residual
    p_n - grad_x H_n(x_n, p_{n+1}, theta).
    """
    ev = _evaluate(ctx, theta)
    return ctx.x_next - ev.forward(), ctx.p_curr - ev.pullback_x(ctx.p_next)


def hamiltonian(ctx, theta):
    ev = _evaluate(ctx, theta)
    value, _ = _hamiltonian_terms(ctx, ev, theta)
    return value


def grad_theta_hamiltonian(ctx, theta):
    """grad_theta H_n: equals -grad_{theta_n} of the batch-mean objective J at
    the parameters that generated ctx.
    """
    return _hamiltonian_grad(ctx, _evaluate(ctx, theta), theta)


def augmented_value_and_grad(ctx, theta):
    """Augmented Hamiltonian and its gradient from a single layer evaluation.
    """
    ev = _evaluate(ctx, theta)
    value, out = _hamiltonian_terms(ctx, ev, theta)
    grad = _hamiltonian_grad(ctx, ev, theta)
    if ctx.rho == 0.0:
        return value, grad
    state_res = ctx.x_next - out
    costate_res = ctx.p_curr - ev.pullback_x(ctx.p_next)
    penalty = float(np.sum(state_res * state_res) +
                    np.sum(costate_res * costate_res))
    value -= 0.5 * ctx.rho * penalty
    grad = grad + ctx.rho * (ev.grad_theta(state_res) +
                             ev.mixed_grad(ctx.p_next, costate_res))
    return value, grad


def augmented_hamiltonian(ctx, theta):
    value, _ = augmented_value_and_grad(ctx, theta)
    return value


def grad_theta_augmented(ctx, theta):
    _, grad = augmented_value_and_grad(ctx, theta)
    return grad
