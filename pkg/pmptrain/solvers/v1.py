# vim: set fileencoding=utf-8 :

"""PMPTrain training loops: extended and basic method of successive
approximations, gradient-soft MSA and the SGD/Adagrad/Adam baselines.

Gradient methods step on the batch-mean objective J, whose gradient is
-grad_theta H_n from the co-state pass.
"""

# Standard library
from __future__ import absolute_import, division, print_function
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
import logging
import time

# Third-party
import numpy as np

# Local/library specific
from pmptrain.data import v1 as pmp_data
from pmptrain.diagnostics import v1 as pmp_diagnostics
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.hamiltonian import v1 as pmp_hamiltonian
from pmptrain.maximizer import v1 as pmp_maximizer
from pmptrain.propagation import v1 as pmp_propagation
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)

EMSA = "emsa"
BASIC_MSA = "basic_msa"
GRAD_MSA = "grad_msa"
SGD = "sgd"
ADAGRAD = "adagrad"
ADAM = "adam"
METHODS = (EMSA, BASIC_MSA, GRAD_MSA, SGD, ADAGRAD, ADAM)
BASELINES = (SGD, ADAGRAD, ADAM)

TRUNCNORMAL = "truncnormal"
ZEROS = "zeros"
INIT_SCHEMES = (TRUNCNORMAL, ZEROS)

DIVERGENCE_THRESHOLD = 1e12
J_INCREASE_TOL = 1e-9


class SolverConfig(object):
    """Outer-loop settings. rho is read by emsa only, eta by the gradient
    methods; both are always recorded.
    """

    def __init__(self, method=EMSA, rho=1.0, eta=0.1, ascent=None,
                 batch_size="full", iterations=100, seed=0, momentum=0.0,
                 adagrad_eps=1e-8, beta1=0.9, beta2=0.999, adam_eps=1e-8,
                 threads=1):
        if method not in METHODS:
            raise pmp_utils.RejectedInputError(
                "unknown method: {0}".format(method))
        if rho < 0:
            raise pmp_utils.RejectedInputError(
                "rho must be >= 0, got {0}".format(rho))
        if not eta > 0:
            raise pmp_utils.RejectedInputError(
                "eta must be > 0, got {0}".format(eta))
        if batch_size != "full" and (int(batch_size) != batch_size or
                                     batch_size < 1):
            raise pmp_utils.RejectedInputError(
                "batch_size must be a positive integer or 'full', got {0}"
                .format(batch_size))
        if int(iterations) != iterations or iterations < 0:
            raise pmp_utils.RejectedInputError(
                "iterations must be >= 0, got {0}".format(iterations))
        if not (0 <= momentum < 1 and 0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise pmp_utils.RejectedInputError(
                "momentum, beta1 and beta2 must lie in [0, 1)")
        if int(threads) != threads or threads < 1:
            raise pmp_utils.RejectedInputError(
                "threads must be >= 1, got {0}".format(threads))
        self.method = method
        self.rho = float(rho)
        self.eta = float(eta)
        self.ascent = ascent or pmp_maximizer.AscentConfig()
        self.batch_size = batch_size
        self.iterations = int(iterations)
        self.seed = int(seed)
        self.momentum = float(momentum)
        self.adagrad_eps = float(adagrad_eps)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.adam_eps = float(adam_eps)
        self.threads = int(threads)

    def replace(self, **changes):
        kwargs = OrderedDict(
            (key, getattr(self, key)) for key in (
                "method", "rho", "eta", "ascent", "batch_size", "iterations",
                "seed", "momentum", "adagrad_eps", "beta1", "beta2",
                "adam_eps", "threads"))
        kwargs.update(changes)
        return SolverConfig(**kwargs)

    def to_ordered_dict(self):
        return OrderedDict([
            ("method", self.method),
            ("rho", self.rho),
            ("eta", self.eta),
            ("batch_size", self.batch_size),
            ("iterations", self.iterations),
            ("seed", self.seed),
            ("momentum", self.momentum),
            ("adagrad_eps", self.adagrad_eps),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("threads", self.threads),
            ("ascent", self.ascent.to_ordered_dict()),
        ])


class BaselineState(object):
    """Optimizer memory carried between baseline iterations, one entry per
    layer: momentum buffer, Adagrad accumulator, Adam moments and step count.
    """

    def __init__(self):
        self.velocity = None
        self.accumulator = None
        self.first_moment = None
        self.second_moment = None
        self.step = 0


def _truncated_normal(rng, size, std, limit=2.0):
    """Normal draws resampled until all lie within +/- limit std.
    """
    values = rng.standard_normal(size)
    outside = np.abs(values) > limit
    while np.any(outside):
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > limit
    return std * values


def initial_params(spec, scheme=TRUNCNORMAL, seed=0, std=0.1, bias=0.1):
    """truncnormal: weights ~ N(0, std^2) truncated at 2 std, biases = bias.
    zeros: every weight and bias 0.
    """
    if scheme not in INIT_SCHEMES:
        raise pmp_utils.RejectedInputError(
            "unknown init scheme: {0}".format(scheme))
    if scheme == ZEROS:
        return pmp_dynamics.ParamStack.zeros(spec)
    rng = np.random.default_rng(seed)
    thetas = list()
    for layer in spec:
        n_weights = layer.num_params - layer.bias_size
        thetas.append(np.concatenate([
            _truncated_normal(rng, n_weights, std),
            np.full(layer.bias_size, bias)]))
    return pmp_dynamics.ParamStack(spec, thetas)


def _maximize_all(spec, ctxs, params_k, config):
    def task(n):
        return pmp_maximizer.maximize_layer(ctxs[n], params_k[n],
                                            config.ascent)

    if config.threads > 1 and len(ctxs) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            thetas = list(pool.map(task, range(len(ctxs))))
    else:
        thetas = [task(n) for n in range(len(ctxs))]
    return pmp_dynamics.ParamStack(spec, thetas)


def _run_iteration(spec, params_k, batch, config, method, rho, update,
                   iteration):
    """Forward, backward, update(ctxs) -> params_{k+1}, then measure.

    Library errors abort the iteration with params_k returned unchanged.
    A non-finite or exploding objective after the update is divergence.
    """
    report = pmp_diagnostics.IterationReport(iteration, method, batch.size)
    times = report.phase_times
    try:
        start = time.perf_counter()
        traj = pmp_propagation.forward_propagate(spec, params_k, batch)
        times["forward"] = time.perf_counter() - start

        start = time.perf_counter()
        costates = pmp_propagation.backward_propagate(spec, params_k, traj,
                                                      batch.targets)
        times["backward"] = time.perf_counter() - start

        start = time.perf_counter()
        ctxs = pmp_hamiltonian.build_contexts(spec, params_k, traj, costates,
                                              rho)
        params_k1 = update(ctxs)
        times["update"] = time.perf_counter() - start
    except pmp_utils.PMPError as err:
        LOG.warning("iteration {0} ({1}) aborted: {2}"
                    .format(iteration, method, err))
        report.status = pmp_diagnostics.STATUS_ERROR
        report.message = str(err)
        report.wall_time = sum(times.values())
        return params_k, report

    start = time.perf_counter()
    j_before = pmp_diagnostics.objective_from_losses(
        spec, params_k, costates.losses)
    report.j_before = j_before
    try:
        report.mu_k = pmp_diagnostics.mu_k(spec, ctxs, params_k, params_k1)
        report.feas_err_state, report.feas_err_costate = \
            pmp_diagnostics.feasibility_errors(spec, ctxs, params_k1)
        losses, traj_k1 = pmp_diagnostics.terminal_losses(spec, params_k1,
                                                          batch)
        j_after = pmp_diagnostics.objective_from_losses(
            spec, params_k1, losses)
    except pmp_utils.NumericError as err:
        j_after = np.inf
        report.message = str(err)
        traj_k1 = None
    times["evaluate"] = time.perf_counter() - start
    report.wall_time = sum(times.values())

    report.J_train = j_after
    report.delta_J = j_after - j_before
    report.j_increased = bool(report.delta_J > J_INCREASE_TOL)
    if not np.isfinite(j_after) or j_after > DIVERGENCE_THRESHOLD:
        report.status = pmp_diagnostics.STATUS_DIVERGED
        report.message = report.message or \
            "J = {0:.6e} exceeds {1:g}".format(j_after, DIVERGENCE_THRESHOLD)
        LOG.warning("iteration {0} ({1}) diverged: {2}"
                    .format(iteration, method, report.message))
        return params_k1, report
    if spec.loss_kind == pmp_dynamics.CROSS_ENTROPY:
        report.accuracy_train = pmp_diagnostics.accuracy_from_logits(
            traj_k1.final, batch.targets)
    if report.j_increased:
        LOG.debug("iteration {0} ({1}): J increased by {2:.3e}"
                  .format(iteration, method, report.delta_J))
    return params_k1, report


def emsa_iteration(spec, params_k, batch, config, iteration=0):
    """One extended-MSA step: maximize each layer's augmented Hamiltonian,
    warm-started at theta^k, with the trajectories frozen at theta^k.
    """
    return _msa_iteration(spec, params_k, batch, config, EMSA, config.rho,
                          iteration)


def basic_msa_iteration(spec, params_k, batch, config, iteration=0):
    """emsa_iteration with rho = 0. Divergence is reported, not raised.
    """
    return _msa_iteration(spec, params_k, batch, config, BASIC_MSA, 0.0,
                          iteration)


def _msa_iteration(spec, params_k, batch, config, method, rho, iteration):
    def update(ctxs):
        return _maximize_all(spec, ctxs, params_k, config)

    return _run_iteration(spec, params_k, batch, config, method, rho, update,
                          iteration)


def grad_msa_iteration(spec, params_k, batch, config, iteration=0):
    """theta^{k+1}_n = theta^k_n + eta grad_theta H_n.
    """
    def update(ctxs):
        return pmp_dynamics.ParamStack(spec, [
            theta + config.eta * pmp_hamiltonian.grad_theta_hamiltonian(
                ctx, theta)
            for ctx, theta in zip(ctxs, params_k)])

    return _run_iteration(spec, params_k, batch, config, GRAD_MSA, 0.0,
                          update, iteration)


def baseline_update(method, thetas, grads, state, config):
    """Apply one SGD/Adagrad/Adam step to per-layer vectors. Mutates state.
    """
    if method == SGD:
        if config.momentum > 0:
            if state.velocity is None:
                state.velocity = [np.zeros_like(g) for g in grads]
            state.velocity = [config.momentum * v + g
                              for v, g in zip(state.velocity, grads)]
            steps = state.velocity
        else:
            steps = grads
        new = [theta - config.eta * step
               for theta, step in zip(thetas, steps)]
    elif method == ADAGRAD:
        if state.accumulator is None:
            state.accumulator = [np.zeros_like(g) for g in grads]
        state.accumulator = [a + g * g
                             for a, g in zip(state.accumulator, grads)]
        new = [theta - config.eta * g / (np.sqrt(a) + config.adagrad_eps)
               for theta, g, a in zip(thetas, grads, state.accumulator)]
    elif method == ADAM:
        if state.first_moment is None:
            state.first_moment = [np.zeros_like(g) for g in grads]
            state.second_moment = [np.zeros_like(g) for g in grads]
        b1, b2 = config.beta1, config.beta2
        state.first_moment = [b1 * m + (1.0 - b1) * g
                              for m, g in zip(state.first_moment, grads)]
        state.second_moment = [b2 * v + (1.0 - b2) * g * g
                               for v, g in zip(state.second_moment, grads)]
        state.step += 1
        correct1 = 1.0 - b1 ** state.step
        correct2 = 1.0 - b2 ** state.step
        new = [theta - config.eta * (m / correct1) /
               (np.sqrt(v / correct2) + config.adam_eps)
               for theta, m, v in zip(thetas, state.first_moment,
                                      state.second_moment)]
    else:
        raise pmp_utils.RejectedInputError(
            "not a baseline method: {0}".format(method))
    if method != ADAM:
        state.step += 1
    return new


def baseline_iteration(spec, params_k, batch, config, state=None,
                       iteration=0):
    """One SGD/Adagrad/Adam step on gradients -grad_theta H_n obtained from
    the co-state pass. state carries optimizer memory between calls.
    """
    if config.method not in BASELINES:
        raise pmp_utils.RejectedInputError(
            "not a baseline method: {0}".format(config.method))
    state = state if state is not None else BaselineState()

    def update(ctxs):
        grads = [-pmp_hamiltonian.grad_theta_hamiltonian(ctx, theta)
                 for ctx, theta in zip(ctxs, params_k)]
        return pmp_dynamics.ParamStack(spec, baseline_update(
            config.method, list(params_k), grads, state, config))

    return _run_iteration(spec, params_k, batch, config, config.method, 0.0,
                          update, iteration)


def _step_function(config):
    if config.method == EMSA:
        return emsa_iteration
    if config.method == BASIC_MSA:
        return basic_msa_iteration
    if config.method == GRAD_MSA:
        return grad_msa_iteration
    state = BaselineState()

    def step(spec, params, batch, config, iteration=0):
        return baseline_iteration(spec, params, batch, config, state,
                                  iteration)
    return step


def _batches(dataset, config):
    if config.batch_size == "full" or config.batch_size >= dataset.size:
        full = dataset.batch()
        while True:
            yield full
    else:
        for batch in pmp_data.minibatch_iter(dataset, config.batch_size,
                                             config.seed):
            yield batch


def train(spec, init_params, dataset, config, test_dataset=None,
          eval_every=1, callback=None):
    """Run config.iterations outer steps and return (history, params).

    Every eval_every iterations, and at the last or a stopping iteration,
    the report's J_train/accuracy_train are re-evaluated on the whole
    training set (unless the batch already was the whole set) and
    J_test/accuracy_test on test_dataset. Stops early on a diverged or error
    status. callback(report) is called after each iteration.
    """
    if dataset.size == 0:
        raise pmp_utils.RejectedInputError("cannot train on an empty dataset")
    if eval_every < 1:
        raise pmp_utils.RejectedInputError(
            "eval_every must be >= 1, got {0}".format(eval_every))
    LOG.info("Solver config: {0}".format(dict(config.to_ordered_dict())))
    history = list()
    params = init_params
    if config.iterations == 0:
        return history, params
    step = _step_function(config)
    batches = _batches(dataset, config)
    for k in range(config.iterations):
        batch = next(batches)
        params, report = step(spec, params, batch, config, iteration=k)
        stopping = report.status != pmp_diagnostics.STATUS_OK
        if (k + 1) % eval_every == 0 or k + 1 == config.iterations or \
                stopping:
            _evaluate_report(spec, params, dataset, test_dataset, batch,
                             report)
        history.append(report)
        LOG.info("iter {0} {1}: J {2:.6e} mu_k {3:.3e} dJ {4:.3e} {5}"
                 .format(k, report.method, report.J_train, report.mu_k,
                         report.delta_J, report.status))
        if callback is not None:
            callback(report)
        if stopping:
            LOG.warning("Stopping at iteration {0}: {1}"
                        .format(k, report.status))
            break
    return history, params


def _evaluate_report(spec, params, dataset, test_dataset, batch, report):
    report.evaluated = True
    if report.status == pmp_diagnostics.STATUS_DIVERGED:
        return
    try:
        if batch.size != dataset.size:
            report.J_train, report.accuracy_train = pmp_diagnostics.evaluate(
                spec, params, dataset.batch())
        if test_dataset is not None:
            report.J_test, report.accuracy_test = pmp_diagnostics.evaluate(
                spec, params, test_dataset.batch())
    except pmp_utils.NumericError as err:
        LOG.warning("evaluation at iteration {0} failed: {1}"
                    .format(report.iter, err))


def find_monotone_rho(spec, init_params, dataset, config, rho0=1.0,
                      max_doublings=10, tol=J_INCREASE_TOL):
    """Double rho from rho0 until a full-batch emsa run has no step raising
    J by more than tol. Returns (rho, history, params); rho is None when no
    candidate qualified, in which case the last run is returned.
    """
    config = config.replace(method=EMSA, batch_size="full")
    rho = rho0
    history, params = list(), init_params
    for _ in range(max_doublings + 1):
        history, params = train(spec, init_params, dataset,
                                config.replace(rho=rho))
        increases = [r.iter for r in history if r.delta_J > tol]
        failed = [r.iter for r in history
                  if r.status != pmp_diagnostics.STATUS_OK]
        if not increases and not failed and \
                len(history) == config.iterations:
            LOG.info("rho {0:g}: monotone over {1} iterations"
                     .format(rho, len(history)))
            return rho, history, params
        LOG.info("rho {0:g}: {1} J increases, {2} failed iterations"
                 .format(rho, len(increases), len(failed)))
        rho *= 2.0
    LOG.warning("no monotone rho found up to {0:g}".format(rho / 2.0))
    return None, history, params
