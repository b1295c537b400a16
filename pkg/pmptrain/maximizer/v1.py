# vim: set fileencoding=utf-8 :

"""PMPTrain bounded L-BFGS ascent for the per-layer Hamiltonian maximization.
"""

# Standard library
from __future__ import absolute_import, division, print_function
from collections import deque, OrderedDict
import logging

# Third-party
import numpy as np

# Local/library specific
from pmptrain.hamiltonian import v1 as pmp_hamiltonian
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)

CONVERGED = "converged"
ITER_LIMIT = "iter_limit"
LINE_SEARCH_STALLED = "line_search_stalled"

# curvature pairs with s.y <= CURVATURE_EPS * |s| |y| are skipped
CURVATURE_EPS = 1e-12


class AscentConfig(object):

    def __init__(self, max_iters=10, memory=10, armijo_c=1e-4,
                 backtrack_factor=0.5, max_backtracks=30, grad_tol=1e-10):
        for name, value in (("max_iters", max_iters), ("memory", memory),
                            ("max_backtracks", max_backtracks)):
            if int(value) != value or value < 1:
                raise pmp_utils.RejectedInputError(
                    "{0} must be a positive integer, got {1}"
                    .format(name, value))
        for name, value in (("armijo_c", armijo_c),
                            ("backtrack_factor", backtrack_factor)):
            if not 0 < value < 1:
                raise pmp_utils.RejectedInputError(
                    "{0} must be in (0, 1), got {1}".format(name, value))
        if grad_tol < 0:
            raise pmp_utils.RejectedInputError(
                "grad_tol must be >= 0, got {0}".format(grad_tol))
        self.max_iters = int(max_iters)
        self.memory = int(memory)
        self.armijo_c = float(armijo_c)
        self.backtrack_factor = float(backtrack_factor)
        self.max_backtracks = int(max_backtracks)
        self.grad_tol = float(grad_tol)

    def to_ordered_dict(self):
        return OrderedDict([
            ("max_iters", self.max_iters),
            ("memory", self.memory),
            ("armijo_c", self.armijo_c),
            ("backtrack_factor", self.backtrack_factor),
            ("max_backtracks", self.max_backtracks),
            ("grad_tol", self.grad_tol),
        ])


def _two_loop(grad, pairs):
    """Apply the L-BFGS inverse Hessian approximation to grad.
    """
    q = grad.copy()
    alphas = list()
    for s, y, inv_sy in reversed(pairs):
        alpha = inv_sy * np.dot(s, q)
        q -= alpha * y
        alphas.append(alpha)
    s, y, _ = pairs[-1]
    r = (np.dot(s, y) / np.dot(y, y)) * q
    for (s, y, inv_sy), alpha in zip(pairs, reversed(alphas)):
        beta = inv_sy * np.dot(y, r)
        r += s * (alpha - beta)
    return r


def _steepest(grad, grad_norm):
    return -grad * min(1.0, 1.0 / grad_norm)


def lbfgs_ascend(objective, theta0, config=None):
    """Maximize objective(theta) -> (value, gradient) from theta0.

    Internally minimizes the negated objective with a two-loop L-BFGS
    direction and Armijo backtracking. Only steps satisfying the Armijo
    condition are taken, so the returned value is never below the starting
    value.

    Returns (theta, value, status) where status is one of converged,
    iter_limit, line_search_stalled.
    """
    config = config or AscentConfig()
    theta = np.array(theta0, dtype=np.float64)
    pmp_utils.check_finite(theta, "starting point")
    value, grad = objective(theta)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise pmp_utils.NumericError(
            "non-finite objective at the starting point")
    f = -float(value)
    g = -np.asarray(grad, dtype=np.float64)
    pairs = deque(maxlen=config.memory)
    status = ITER_LIMIT
    for iteration in range(config.max_iters):
        g_norm = np.linalg.norm(g)
        if g_norm <= config.grad_tol:
            status = CONVERGED
            break
        if pairs:
            direction = -_two_loop(g, pairs)
        else:
            direction = _steepest(g, g_norm)
        slope = np.dot(g, direction)
        if not (np.isfinite(slope) and slope < 0):
            LOG.debug("iteration {0}: not a descent direction, resetting"
                      .format(iteration))
            pairs.clear()
            direction = _steepest(g, g_norm)
            slope = np.dot(g, direction)
        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks + 1):
            trial = theta + step * direction
            try:
                trial_value, trial_grad = objective(trial)
            except pmp_utils.NumericError:
                trial_value, trial_grad = np.nan, np.nan
            trial_f = -float(trial_value)
            if (np.isfinite(trial_f) and np.all(np.isfinite(trial_grad)) and
                    trial_f <= f + config.armijo_c * step * slope):
                accepted = True
                break
            step *= config.backtrack_factor
        if not accepted:
            LOG.debug("iteration {0}: line search stalled, keeping theta"
                      .format(iteration))
            status = LINE_SEARCH_STALLED
            break
        trial_g = -np.asarray(trial_grad, dtype=np.float64)
        s = trial - theta
        y = trial_g - g
        sy = np.dot(s, y)
        if sy > CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        theta, f, g = trial, trial_f, trial_g
    else:
        if np.linalg.norm(g) <= config.grad_tol:
            status = CONVERGED
    return theta, -f, status


def maximize_layer(ctx, theta_k, config=None):
    """Approximately maximize the augmented Hamiltonian of ctx's layer,
    warm-started at theta_k. The curvature history starts empty.
    """
    def objective(theta):
        return pmp_hamiltonian.augmented_value_and_grad(ctx, theta)

    theta, value, status = lbfgs_ascend(objective, theta_k, config)
    LOG.debug("layer {0}: augmented H {1:.6e} ({2})"
              .format(ctx.n, value, status))
    return theta
