# vim: set fileencoding=utf-8 :

"""PMPTrain diagnostics: objective values, Hamiltonian increase, feasibility
errors and the audits that check them against the convergence estimates.

J is the batch-mean terminal loss plus sum_n delta_n L(theta_n). The terminal
co-states carry the 1/m of the mean, so the batch-summed Hamiltonians give
grad_theta H_n = -grad_{theta_n} J and the loss decrement audit
(lemma1_audit) compares J differences with mu_k directly.
"""

# Standard library
from __future__ import absolute_import, division, print_function
from collections import OrderedDict
import logging

# Third-party
import numpy as np

# Local/library specific
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.hamiltonian import v1 as pmp_hamiltonian
from pmptrain.propagation import v1 as pmp_propagation
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_DIVERGED = "diverged"
STATUS_ERROR = "error"

# below this, both feasibility errors count as vanishing
FEASIBILITY_EPS = 1e-14
# relative inflation of power-iteration norms in the co-state bound
SPECTRAL_MARGIN = 1e-6


class IterationReport(object):
    """Per-iteration record.

    J_train is the objective on the iteration's batch after the update
    unless train() replaced it with a training-set evaluation. delta_J
    compares the objective before and after the update on the same batch. phase_times maps phase name to seconds.
    """

    def __init__(self, iter, method, batch_size=0, J_train=np.nan,
                 J_test=None, accuracy_train=None, accuracy_test=None,
                 mu_k=0.0, feas_err_state=0.0, feas_err_costate=0.0,
                 delta_J=0.0, j_before=np.nan,
                 j_increased=False, wall_time=0.0, phase_times=None,
                 status=STATUS_OK, message="", evaluated=False):
        self.iter = iter
        self.method = method
        self.batch_size = batch_size
        self.J_train = J_train
        self.J_test = J_test
        self.accuracy_train = accuracy_train
        self.accuracy_test = accuracy_test
        self.mu_k = mu_k
        self.feas_err_state = feas_err_state
        self.feas_err_costate = feas_err_costate
        self.delta_J = delta_J
        self.j_before = j_before
        self.j_increased = j_increased
        self.wall_time = wall_time
        self.phase_times = phase_times if phase_times else OrderedDict()
        self.status = status
        self.message = message
        self.evaluated = evaluated

    def to_ordered_dict(self):
        doc = OrderedDict()
        for key in ("iter", "method", "batch_size", "J_train", "J_test",
                    "accuracy_train", "accuracy_test", "mu_k",
                    "feas_err_state", "feas_err_costate", "delta_J",
                    "j_before", "j_increased", "wall_time", "status",
                    "message", "evaluated"):
            doc[key] = getattr(self, key)
        doc["phase_times"] = OrderedDict(self.phase_times)
        return doc

    def __repr__(self):
        return "IterationReport(iter={0}, method={1}, J={2}, status={3})" \
            .format(self.iter, self.method, self.J_train, self.status)


def _regularizer_sum(spec, params):
    total = 0.0
    for layer, theta in zip(spec, params):
        value, _ = pmp_dynamics.regularizer(theta, spec.regularizer_weight)
        total += layer.step * value
    return total


def objective_from_losses(spec, params, losses):
    """J from per-sample terminal losses.
    """
    return float(np.mean(losses)) + _regularizer_sum(spec, params)


def terminal_losses(spec, params, batch):
    traj = pmp_propagation.forward_propagate(spec, params, batch)
    losses, _ = pmp_dynamics.terminal_loss(spec, traj.final, batch.targets)
    return losses, traj


def total_loss(spec, params, batch):
    """Batch-mean terminal loss plus sum_n delta_n L(theta_n).
    """
    losses, _ = terminal_losses(spec, params, batch)
    return objective_from_losses(spec, params, losses)


def accuracy_from_logits(logits, labels):
    """Fraction of argmax hits. np.argmax resolves ties to the lower index.
    """
    if len(labels) == 0:
        return None
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def evaluate(spec, params, batch):
    """(J, accuracy) in one forward pass; accuracy is None for regression.
    """
    losses, traj = terminal_losses(spec, params, batch)
    j_value = objective_from_losses(spec, params, losses)
    if spec.loss_kind != pmp_dynamics.CROSS_ENTROPY:
        return j_value, None
    return j_value, accuracy_from_logits(traj.final, batch.targets)


def accuracy(spec, params, batch):
    return evaluate(spec, params, batch)[1]


def objective_gradient(spec, params, batch):
    """J and its gradient (flat) via the co-state pass.
    """
    traj = pmp_propagation.forward_propagate(spec, params, batch)
    costates = pmp_propagation.backward_propagate(spec, params, traj,
                                                  batch.targets)
    ctxs = pmp_hamiltonian.build_contexts(spec, params, traj, costates, 0.0)
    grad = np.concatenate([
        -pmp_hamiltonian.grad_theta_hamiltonian(ctx, theta)
        for ctx, theta in zip(ctxs, params)])
    return objective_from_losses(spec, params, costates.losses), grad


def _check_stacks(ctxs, *stacks):
    for stack in stacks:
        if len(stack) != len(ctxs):
            raise pmp_utils.RejectedInputError(
                "{0} layer contexts but a stack of {1} layers"
                .format(len(ctxs), len(stack)))


def mu_k(spec, ctxs, theta_k, theta_k1):
    """Sum over layers of H_n(theta^{k+1}_n) - H_n(theta^k_n) with the
    contexts frozen at theta^k.
    """
    _check_stacks(ctxs, theta_k, theta_k1)
    total = 0.0
    for ctx, old, new in zip(ctxs, theta_k, theta_k1):
        total += (pmp_hamiltonian.hamiltonian(ctx, new) -
                  pmp_hamiltonian.hamiltonian(ctx, old))
    return total


def feasibility_errors(spec, ctxs, theta_k1):
    """(state error, co-state error): batch-summed squared changes of the
    layer maps and of grad_x H_n when theta^k is replaced by theta^{k+1}.
    The contexts hold the theta^k values.
    """
    _check_stacks(ctxs, theta_k1)
    state_err = 0.0
    costate_err = 0.0
    for ctx, theta in zip(ctxs, theta_k1):
        state_res, costate_res = pmp_hamiltonian.residuals(ctx, theta)
        state_err += float(np.sum(state_res * state_res))
        costate_err += float(np.sum(costate_res * costate_res))
    return state_err, costate_err


class LemmaAudit(object):
    """Outcome of lemma1_audit.

    c_min: per audited iteration, (iter, implied lower bound on C or None)
    max_c_min: max(0, largest implied bound)
    flags: iterations violating the inequality
    """

    def __init__(self, c_min, max_c_min, flags):
        self.c_min = c_min
        self.max_c_min = max_c_min
        self.flags = flags

    @property
    def passed(self):
        return not self.flags


def lemma1_audit(history, tol=1e-9):
    """Invert J(new) <= J(old) - mu_k + C (state_err + costate_err) per
    iteration for the smallest C.

    An iteration is flagged when its feasibility errors vanish yet
    delta_J > -mu_k + tol, when any audited value is non-finite, or when
    it violates the inequality at the reported max_c_min.
    """
    reports = [report for report in history
               if report.status != STATUS_ERROR]
    if not reports:
        raise pmp_utils.RejectedInputError("lemma1_audit needs a history")
    c_min = list()
    flags = list()
    for report in reports:
        values = (report.delta_J, report.mu_k, report.feas_err_state,
                  report.feas_err_costate)
        if not np.all(np.isfinite(values)):
            flags.append(report.iter)
            c_min.append((report.iter, None))
            continue
        denominator = report.feas_err_state + report.feas_err_costate
        excess = report.delta_J + report.mu_k
        if denominator <= FEASIBILITY_EPS:
            if excess > tol:
                flags.append(report.iter)
            c_min.append((report.iter, None))
        else:
            c_min.append((report.iter, excess / denominator))
    bounds = [value for _, value in c_min if value is not None]
    max_c_min = max([0.0] + bounds)
    for report in reports:
        if report.iter in flags:
            continue
        denominator = report.feas_err_state + report.feas_err_costate
        if denominator <= FEASIBILITY_EPS:
            continue
        bound = -report.mu_k + max_c_min * denominator
        if report.delta_J > bound + tol * max(1.0, abs(bound)):
            flags.append(report.iter)
    if flags:
        LOG.warning("Loss decrement audit flagged iterations: {0}".format(flags))
    return LemmaAudit(c_min, max_c_min, flags)


class CostateAudit(object):
    """Outcome of costate_norm_audit. margins[n] is the smallest relative
    slack (bound - |p_n|) / bound over the batch for layer boundary n.
    """

    def __init__(self, passed, margins, bounds_factor):
        self.passed = passed
        self.margins = margins
        self.bounds_factor = bounds_factor


def _growth_factor(layer, theta):
    weights, _ = layer.split(theta)
    norm = pmp_propagation.spectral_norm(weights) * (1.0 + SPECTRAL_MARGIN)
    if layer.kind == pmp_dynamics.RESIDUAL_DENSE:
        return 1.0 + layer.delta * norm
    return norm


def costate_norm_audit(spec, params, batch, costates=None, rtol=1e-9,
                       atol=1e-12):
    """Check |p_n| <= |p_N| prod_{m >= n} factor_m per sample, where
    p_N = -grad Phi(x_N) / m, factor_m = 1 + delta_m |W_m|_2 for residual tanh
    layers and |W_m|_2 for the dense projection and classifier. The norms
    come from spectral_norm, inflated by SPECTRAL_MARGIN.

    costates may be supplied to audit a trajectory other than the one the
    network produces.
    """
    for n, layer in enumerate(spec):
        if layer.is_conv:
            raise pmp_utils.RejectedInputError(
                "costate_norm_audit supports dense layers only;"
                " layer {0} is {1}".format(n, layer.kind))
    traj = pmp_propagation.forward_propagate(spec, params, batch)
    _, grads = pmp_dynamics.terminal_loss(spec, traj.final, batch.targets)
    if costates is None:
        costates = pmp_propagation.backward_propagate(
            spec, params, traj, batch.targets)
    bound = np.linalg.norm(grads, axis=1) / max(len(grads), 1)
    factors = [1.0] * (len(spec) + 1)
    margins = [None] * (len(spec) + 1)
    passed = True
    for n in range(len(spec), -1, -1):
        if n < len(spec):
            factor = _growth_factor(spec[n], params[n])
            bound = bound * factor
            factors[n] = factors[n + 1] * factor
        norms = np.linalg.norm(costates[n], axis=1)
        slack = bound * (1.0 + rtol) + atol - norms
        if np.any(slack < 0):
            passed = False
        scale = np.where(bound > 0, bound, 1.0)
        margins[n] = float(np.min((bound - norms) / scale))
    if not passed:
        LOG.warning("co-state norm bound violated")
    return CostateAudit(passed, margins, factors)


class CheckResult(object):
    """Finite-difference comparison. numeric/analytic are flat arrays.
    """

    def __init__(self, passed, worst_rel_error, numeric, analytic):
        self.passed = passed
        self.worst_rel_error = worst_rel_error
        self.numeric = numeric
        self.analytic = analytic


def compare_gradients(numeric, analytic, tol, atol):
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    diff = np.abs(numeric - analytic)
    scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-8)
    rel = diff / scale
    ok = (rel < tol) | (diff <= atol)
    worst = float(rel.max()) if rel.size else 0.0
    return CheckResult(bool(np.all(ok)), worst, numeric, analytic)


def gradient_check(fn, point, h=1e-5, tol=1e-6, atol=1e-9):
    """Central-difference check of fn(point) -> (value, gradient).

    Relative error is |a - b| / max(|a|, |b|, 1e-8); a coordinate also passes
    when |a - b| <= atol.
    """
    point = np.array(point, dtype=np.float64)
    _, analytic = fn(point)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    flat = point.ravel()
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        up = flat.copy()
        down = flat.copy()
        up[i] += h
        down[i] -= h
        f_up, _ = fn(up.reshape(point.shape))
        f_down, _ = fn(down.reshape(point.shape))
        numeric[i] = (f_up - f_down) / (2.0 * h)
    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
        raise pmp_utils.NumericError("non-finite evaluation in gradient check")
    return compare_gradients(numeric, analytic, tol, atol)


def _forward_from(spec, params, n, x):
    for m in range(n, len(spec)):
        x = pmp_dynamics.LayerEval(spec[m], x, params[m], m).forward()
    return x


def costate_identity_check(spec, params, batch, h=1e-5, tol=1e-5,
                           atol=1e-9, layers=None):
    """Compare p_n with -grad_{x_n} Phi(x_N) / m by central differences,
    re-running the network from perturbed x_n. Samples are independent, so
    one perturbed pass per coordinate serves the whole batch.
    """
    traj = pmp_propagation.forward_propagate(spec, params, batch)
    costates = pmp_propagation.backward_propagate(spec, params, traj,
                                                  batch.targets)
    if layers is None:
        layers = range(len(spec) + 1)
    numeric_all = list()
    analytic_all = list()
    for n in layers:
        x_n = traj[n]
        numeric = np.empty_like(x_n)
        for j in range(x_n.shape[1]):
            up = x_n.copy()
            down = x_n.copy()
            up[:, j] += h
            down[:, j] -= h
            loss_up, _ = pmp_dynamics.terminal_loss(
                spec, _forward_from(spec, params, n, up), batch.targets)
            loss_down, _ = pmp_dynamics.terminal_loss(
                spec, _forward_from(spec, params, n, down), batch.targets)
            numeric[:, j] = -(loss_up - loss_down) / (2.0 * h * len(x_n))
        numeric_all.append(numeric.ravel())
        analytic_all.append(np.asarray(costates[n]).ravel())
    return compare_gradients(np.concatenate(numeric_all),
                             np.concatenate(analytic_all), tol, atol)


class HessianSpectrum(object):

    def __init__(self, eigenvalues, zero_tol):
        self.eigenvalues = eigenvalues
        scale = max(1.0, float(np.max(np.abs(eigenvalues))))
        threshold = zero_tol * scale
        self.n_negative = int(np.sum(eigenvalues < -threshold))
        self.n_positive = int(np.sum(eigenvalues > threshold))
        self.n_zero = len(eigenvalues) - self.n_negative - self.n_positive

    @property
    def is_saddle(self):
        return self.n_negative > 0 and self.n_positive > 0


def hessian_spectrum(spec, params, batch, h=1e-5, zero_tol=1e-6):
    """Eigenvalues of the J Hessian from central differences of the
    analytic gradient, symmetrized.
    """
    flat = params.flat()
    size = flat.size
    hessian = np.empty((size, size))
    for j in range(size):
        up = flat.copy()
        down = flat.copy()
        up[j] += h
        down[j] -= h
        _, grad_up = objective_gradient(
            spec, pmp_dynamics.ParamStack.from_flat(spec, up), batch)
        _, grad_down = objective_gradient(
            spec, pmp_dynamics.ParamStack.from_flat(spec, down), batch)
        hessian[:, j] = (grad_up - grad_down) / (2.0 * h)
    hessian = 0.5 * (hessian + hessian.T)
    eigenvalues = np.linalg.eigvalsh(hessian)
    LOG.debug("Hessian of {0} parameters: min {1:.3e} max {2:.3e}"
              .format(size, eigenvalues[0], eigenvalues[-1]))
    return HessianSpectrum(eigenvalues, zero_tol)
