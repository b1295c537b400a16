# vim: set fileencoding=utf-8 :

"""PMPTrain experiment runner: presets, run configuration and the train,
diag, compare and data-info commands with their artifacts.
"""

# Standard library
from __future__ import absolute_import, division, print_function
from collections import OrderedDict
import csv
import io
import logging
import os
import sys

# Third-party
import numpy as np

# Local/library specific
from pmptrain.config import v1 as pmp_config
from pmptrain.data import v1 as pmp_data
from pmptrain.diagnostics import v1 as pmp_diagnostics
from pmptrain.dynamics import v1 as pmp_dynamics
from pmptrain.hamiltonian import v1 as pmp_hamiltonian
from pmptrain.maximizer import v1 as pmp_maximizer
from pmptrain.propagation import v1 as pmp_propagation
from pmptrain.solvers import v1 as pmp_solvers
from pmptrain.utils import v1 as pmp_utils
from pmptrain.yaml import v1 as pmp_yaml


LOG = logging.getLogger(__name__)

COMMANDS = ("train", "diag", "compare", "data-info")
SINE = "sine"
MNIST_DENSE = "mnist_dense"
MNIST_CONV = "mnist_conv"
FASHION_CONV = "fashion_conv"
CUSTOM = "custom"
EXPERIMENTS = (SINE, MNIST_DENSE, MNIST_CONV, FASHION_CONV, CUSTOM)
IMAGE_SIDE = 28
NUM_CLASSES = 10

HISTORY_FILE = "history.csv"
TIMING_FILE = "timing.csv"
COMPARE_FILE = "compare.csv"
CONFIG_ECHO_FILE = "config.yaml"
PARAMS_BLOB_FILE = "params.bin"
PARAMS_MANIFEST_FILE = "params.yaml"
RUN_LOG_FILE = "run.log"
PARAMS_FORMAT = "pmptrain-params"

# Append new columns at the end; never reorder within a major version
HISTORY_COLUMNS = ("iter", "method", "J_train", "J_test", "acc_train",
                   "acc_test", "mu_k", "feas_state", "feas_costate",
                   "delta_J", "wall_time_s", "status")
TIMING_COLUMNS = ("iter", "method", "forward_s", "backward_s", "update_s",
                  "evaluate_s", "wall_time_s")
PHASES = ("forward", "backward", "update", "evaluate")
# absolute error floor of the augmented Hamiltonian derivative checks
AUGMENTED_ATOL = 1e-7

_CONV_PRESET = OrderedDict([
    ("layers", 7), ("delta", 0.5), ("channels", 32), ("train_subset", 5000),
    ("batch_size", 100), ("iterations", 250), ("eta", 0.1),
    ("eval_every", 50)])
_SINE_PRESET = OrderedDict([
    ("layers", 20), ("delta", 0.25), ("dim", 5), ("n_train", 1000),
    ("n_test", 1000), ("batch_size", "full"), ("iterations", 200),
    ("eta", 0.1), ("eval_every", 1)])

# Preset defaults; config file and command line values override them
PRESETS = OrderedDict([
    (SINE, _SINE_PRESET),
    (MNIST_DENSE, OrderedDict([
        ("layers", 4), ("delta", 0.5), ("dim", 32), ("train_subset", 5000),
        ("batch_size", 100), ("iterations", 250), ("eta", 0.1),
        ("eval_every", 50)])),
    (MNIST_CONV, _CONV_PRESET),
    (FASHION_CONV, _CONV_PRESET),
    (CUSTOM, _SINE_PRESET),
])

DEFAULTS = OrderedDict([
    ("method", pmp_solvers.EMSA), ("rho", 1.0), ("activation",
                                                 pmp_dynamics.TANH),
    ("regularizer_weight", 0.0), ("init", pmp_solvers.TRUNCNORMAL),
    ("seed", 0), ("threads", 1), ("max_iters", 10), ("memory", 10),
    ("armijo_c", 1e-4), ("backtrack_factor", 0.5), ("max_backtracks", 30),
    ("grad_tol", 1e-10), ("momentum", 0.0), ("adagrad_eps", 1e-8),
    ("beta1", 0.9), ("beta2", 0.999), ("adam_eps", 1e-8), ("dim", 5),
    ("channels", 32)])


def build_parser():
    """Instantiate configargparse with every PMPTrain option.
    """
    add_args = {"config": True, "output": True, "verbosity": True}
    cap = pmp_config.PMPConfigArgParse(
        description="Train residual networks with the method of successive"
        " approximations and compare against gradient baselines.",
        add_args=add_args)
    cap.add_argument("command", choices=COMMANDS,
                     help="train: run one experiment. diag: invariant suite."
                     " compare: several methods, merged CSV. data-info:"
                     " describe the datasets.")
    cap.add_argument("-e", "--experiment", choices=EXPERIMENTS, default=SINE,
                     help="Preset. Default: %(default)s")
    network = cap.add_argument_group("network")
    network.add_argument("--layers", type=pmp_config.positive_int,
                         help="Number of residual layers.")
    network.add_argument("--delta", type=float,
                         help="Residual step size.")
    network.add_argument("--dim", type=pmp_config.positive_int,
                         help="State dimension (sine) or hidden width"
                         " (mnist_dense).")
    network.add_argument("--channels", type=pmp_config.positive_int,
                         help="Convolution channels (conv presets).")
    network.add_argument("--activation", choices=pmp_dynamics.ACTIVATIONS)
    network.add_argument("--regularizer-weight", type=float)
    solver = cap.add_argument_group("solver")
    solver.add_argument("-m", "--method", choices=pmp_solvers.METHODS)
    solver.add_argument("--rho", type=float,
                        help="Penalty weight of the augmented Hamiltonian."
                        " Hamiltonians carry the batch-mean loss scale, so"
                        " rho does not depend on the batch size.")
    solver.add_argument("--eta", type=float,
                        help="Learning rate of the gradient methods.")
    solver.add_argument("--batch-size", type=pmp_config.batch_size,
                        help="Positive integer or 'full'.")
    solver.add_argument("--iterations", type=int)
    solver.add_argument("--seed", type=int)
    solver.add_argument("--threads", type=pmp_config.positive_int,
                        help="Worker threads for per-layer maximization.")
    solver.add_argument("--eval-every", type=pmp_config.positive_int)
    solver.add_argument("--momentum", type=float)
    solver.add_argument("--adagrad-eps", type=float)
    solver.add_argument("--beta1", type=float)
    solver.add_argument("--beta2", type=float)
    solver.add_argument("--adam-eps", type=float)
    solver.add_argument("--rho-search", action="store_true",
                        help="train: double rho until no iteration raises J"
                        " and record the result.")
    ascent = cap.add_argument_group("L-BFGS ascent")
    ascent.add_argument("--max-iters", type=pmp_config.positive_int)
    ascent.add_argument("--memory", type=pmp_config.positive_int)
    ascent.add_argument("--armijo-c", type=float)
    ascent.add_argument("--backtrack-factor", type=float)
    ascent.add_argument("--max-backtracks", type=pmp_config.positive_int)
    ascent.add_argument("--grad-tol", type=float)
    init = cap.add_argument_group("initialization")
    init.add_argument("--init", choices=pmp_solvers.INIT_SCHEMES)
    init.add_argument("--init-params", metavar="DIR",
                      help="Start from params.bin/params.yaml in DIR.")
    data = cap.add_argument_group("data")
    data.add_argument("--n-train", type=pmp_config.positive_int)
    data.add_argument("--n-test", type=pmp_config.positive_int)
    data.add_argument("--train-images", metavar="PATH")
    data.add_argument("--train-labels", metavar="PATH")
    data.add_argument("--test-images", metavar="PATH")
    data.add_argument("--test-labels", metavar="PATH")
    data.add_argument("--train-subset", type=pmp_config.positive_int,
                      help="Keep the first N training samples.")
    data.add_argument("--test-subset", type=pmp_config.positive_int)
    other = cap.add_argument_group("diag and compare")
    other.add_argument("--hessian", action="store_true",
                       help="diag: report the Hessian spectrum.")
    other.add_argument("--compare-methods", metavar="METHODS",
                       help="compare: comma separated methods run on copies"
                       " of this configuration.")
    other.add_argument("--compare-config", metavar="PATH", action="append",
                       help="compare: additional run configuration file."
                       " May be specified multiple times.")
    return cap


class RunConfig(object):
    """Fully resolved run configuration: command line over config file over
    preset defaults.
    """

    FIELDS = ("experiment", "layers", "delta", "dim", "channels",
              "activation", "regularizer_weight", "method", "rho", "eta",
              "batch_size", "iterations", "seed", "threads", "eval_every",
              "momentum", "adagrad_eps", "beta1", "beta2", "adam_eps",
              "max_iters", "memory", "armijo_c", "backtrack_factor",
              "max_backtracks", "grad_tol", "init", "init_params", "n_train",
              "n_test", "train_images", "train_labels", "test_images",
              "test_labels", "train_subset", "test_subset", "output_dir",
              "record_wall_time", "rho_search", "hessian", "compare_methods",
              "compare_config")

    def __init__(self, command="train", **values):
        self.command = command
        for field in self.FIELDS:
            setattr(self, field, values.get(field))
        self.rho_star = values.get("rho_star")

    @classmethod
    def from_args(cls, args):
        experiment = args.experiment or SINE
        preset = PRESETS[experiment]
        values = OrderedDict()
        for field in cls.FIELDS:
            value = getattr(args, field, None)
            if value is None:
                value = preset.get(field, DEFAULTS.get(field))
            values[field] = value
        values["experiment"] = experiment
        return cls(command=getattr(args, "command", "train"), **values)

    def replace(self, **changes):
        values = OrderedDict((f, getattr(self, f)) for f in self.FIELDS)
        values["rho_star"] = self.rho_star
        values.update(changes)
        return RunConfig(command=values.pop("command", self.command),
                         **values)

    @property
    def solver(self):
        try:
            ascent = pmp_maximizer.AscentConfig(
                self.max_iters, self.memory, self.armijo_c,
                self.backtrack_factor, self.max_backtracks, self.grad_tol)
            return pmp_solvers.SolverConfig(
                self.method, self.rho, self.eta, ascent, self.batch_size,
                self.iterations, self.seed, self.momentum, self.adagrad_eps,
                self.beta1, self.beta2, self.adam_eps, self.threads)
        except pmp_utils.RejectedInputError as err:
            raise pmp_utils.Fatal("invalid solver configuration: {0}"
                                  .format(err))

    def to_ordered_dict(self):
        """Config-file echo: kebab-case keys mirroring the long options.
        """
        doc = OrderedDict()
        for field in self.FIELDS:
            value = getattr(self, field)
            if value is None:
                continue
            doc[field.replace("_", "-")] = value
        if self.rho_star is not None:
            doc["rho-star"] = self.rho_star
        return doc


# Networks and data ------------------------------------------------------------

def build_network(run):
    try:
        return _build_network(run)
    except pmp_utils.RejectedInputError as err:
        raise pmp_utils.Fatal("invalid network configuration: {0}"
                              .format(err))


def _build_network(run):
    layer = pmp_dynamics.LayerSpec
    act = run.activation
    if run.experiment in (SINE, CUSTOM):
        d = run.dim
        layers = [layer(pmp_dynamics.RESIDUAL_DENSE, d, d, run.delta, act)
                  for _ in range(run.layers)]
        return pmp_dynamics.NetworkSpec(layers, pmp_dynamics.SUM_SQUARED,
                                        run.regularizer_weight)
    pixels = IMAGE_SIDE * IMAGE_SIDE
    if run.experiment == MNIST_DENSE:
        d = run.dim
        layers = [layer(pmp_dynamics.PROJECTION, pixels, d, activation=act)]
        layers += [layer(pmp_dynamics.RESIDUAL_DENSE, d, d, run.delta, act)
                   for _ in range(run.layers)]
        layers.append(layer(pmp_dynamics.CLASSIFIER, d, NUM_CLASSES))
        return pmp_dynamics.NetworkSpec(layers, pmp_dynamics.CROSS_ENTROPY,
                                        run.regularizer_weight)
    c = run.channels
    side = IMAGE_SIDE
    first = pmp_dynamics.ConvShape(1, c, side, side, pool=True)
    second = pmp_dynamics.ConvShape(c, c, side // 2, side // 2, pool=True)
    residual = pmp_dynamics.ConvShape(c, c, side // 4, side // 4)
    layers = [layer(pmp_dynamics.PROJECTION, first.in_dim, first.out_dim,
                    activation=act, conv=first),
              layer(pmp_dynamics.PROJECTION, second.in_dim, second.out_dim,
                    activation=act, conv=second)]
    layers += [layer(pmp_dynamics.RESIDUAL_CONV2D, residual.in_dim,
                     residual.out_dim, run.delta, act, conv=residual)
               for _ in range(run.layers)]
    layers.append(layer(pmp_dynamics.CLASSIFIER, residual.out_dim,
                        NUM_CLASSES))
    return pmp_dynamics.NetworkSpec(layers, pmp_dynamics.CROSS_ENTROPY,
                                    run.regularizer_weight)


def load_datasets(run):
    """(train, held-out) datasets for the run; held-out may be None.
    """
    try:
        return _load_datasets(run)
    except (pmp_utils.PMPError, IOError, OSError) as err:
        raise pmp_utils.Fatal("cannot load data: {0}".format(err))


def _load_datasets(run):
    if run.experiment in (SINE, CUSTOM):
        train = pmp_data.sine_dataset(run.n_train, run.seed)
        test = pmp_data.sine_dataset(run.n_test, run.seed + 1)
        return (train.with_inputs(pmp_data.lift_input(train.inputs, run.dim)),
                test.with_inputs(pmp_data.lift_input(test.inputs, run.dim)))
    if not (run.train_images and run.train_labels):
        raise pmp_utils.RejectedInputError(
            "{0} needs --train-images and --train-labels"
            .format(run.experiment))
    full = pmp_data.load_idx_pair(run.train_images, run.train_labels,
                                  run.experiment)
    held_out = None
    train = full
    if full.size > pmp_data.MNIST_VALIDATION_SIZE:
        train, held_out = pmp_data.mnist_split(full)
    if run.test_images and run.test_labels:
        held_out = pmp_data.load_idx_pair(
            run.test_images, run.test_labels,
            "{0}-test".format(run.experiment))
    if run.train_subset:
        train = train.head(run.train_subset)
    if held_out is not None and run.test_subset:
        held_out = held_out.head(run.test_subset)
    return train, held_out


def initial_stack(run, spec):
    if run.init_params:
        loaded_spec, params = load_params(run.init_params)
        if [(l.kind, l.num_params) for l in loaded_spec] != \
                [(l.kind, l.num_params) for l in spec]:
            raise pmp_utils.Fatal("parameters in {0} do not fit the {1}"
                                  " network".format(run.init_params,
                                                    run.experiment))
        return pmp_dynamics.ParamStack(spec, list(params))
    return pmp_solvers.initial_params(spec, run.init, run.seed)


# Artifacts -------------------------------------------------------------------

def _number(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def history_rows(history, record_wall_time=False):
    """One row per evaluated report, in HISTORY_COLUMNS order.
    """
    rows = list()
    for report in history:
        if not report.evaluated:
            continue
        wall_time = report.wall_time if record_wall_time else 0.0
        rows.append([
            _number(report.iter), report.method, _number(report.J_train),
            _number(report.J_test), _number(report.accuracy_train),
            _number(report.accuracy_test), _number(report.mu_k),
            _number(report.feas_err_state), _number(report.feas_err_costate),
            _number(report.delta_J), _number(wall_time), report.status])
    return rows


def write_history_csv(path, history, record_wall_time=False):
    text = _csv_text(HISTORY_COLUMNS, history_rows(history, record_wall_time))
    return pmp_utils.write_atomic(path, text)


def write_timing_csv(path, history):
    rows = list()
    for report in history:
        rows.append([_number(report.iter), report.method] +
                    [_number(report.phase_times.get(phase, 0.0))
                     for phase in PHASES] + [_number(report.wall_time)])
    return pmp_utils.write_atomic(path, _csv_text(TIMING_COLUMNS, rows))


def write_config_echo(path, run):
    text = pmp_yaml.dump_ordered(run.to_ordered_dict())
    return pmp_utils.write_atomic(path, text)


def save_params(directory, spec, params):
    """Write params.bin (little-endian float64, layers in order, weights
    row-major then biases) and the params.yaml manifest.
    """
    flat = params.flat()
    layers = list()
    offset = 0
    for n, layer in enumerate(spec):
        layers.append(OrderedDict([
            ("index", n),
            ("kind", layer.kind),
            ("weight_shape", [int(s) for s in layer.weight_shape]),
            ("bias_size", layer.bias_size),
            ("offset", offset),
            ("count", layer.num_params),
        ]))
        offset += layer.num_params
    manifest = OrderedDict([
        ("format", PARAMS_FORMAT),
        ("version", 1),
        ("dtype", "float64"),
        ("byteorder", "little"),
        ("count", int(flat.size)),
        ("blob", PARAMS_BLOB_FILE),
        ("layers", layers),
        ("network", spec.to_dict()),
    ])
    blob_path = os.path.join(directory, PARAMS_BLOB_FILE)
    pmp_utils.write_atomic(blob_path, flat.astype("<f8").tobytes(),
                           mode="wb")
    pmp_utils.write_atomic(os.path.join(directory, PARAMS_MANIFEST_FILE),
                           pmp_yaml.dump_ordered(manifest))
    return blob_path


def load_params(directory):
    """Read a saved parameter blob back: (NetworkSpec, ParamStack).
    """
    manifest_path = os.path.join(directory, PARAMS_MANIFEST_FILE)
    with open(manifest_path, "r") as manifest_fo:
        manifest = pmp_yaml.load(manifest_fo.read())
    if not isinstance(manifest, dict) or \
            manifest.get("format") != PARAMS_FORMAT:
        raise pmp_utils.Fatal("{0} is not a parameter manifest"
                              .format(manifest_path))
    spec = pmp_dynamics.NetworkSpec.from_dict(manifest["network"])
    blob_path = os.path.join(directory, manifest.get("blob",
                                                     PARAMS_BLOB_FILE))
    with open(blob_path, "rb") as blob_fo:
        raw = blob_fo.read()
    expected = 8 * int(manifest["count"])
    if len(raw) != expected:
        raise pmp_utils.ParseError(
            "{0} holds {1} bytes, manifest declares {2}"
            .format(blob_path, len(raw), expected), min(len(raw), expected))
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return spec, pmp_dynamics.ParamStack.from_flat(spec, flat)


# Commands --------------------------------------------------------------------

def _prepare_output(run, logger=None):
    try:
        if not os.path.isdir(run.output_dir):
            os.makedirs(run.output_dir)
    except OSError as err:
        raise pmp_utils.Fatal("cannot create output directory {0}: {1}"
                              .format(run.output_dir, err))
    if logger is not None:
        logger.add_file_handler(os.path.join(run.output_dir, RUN_LOG_FILE))
    return run.output_dir


def train_run(run, logger=None):
    """Train one configuration and write its artifacts. Returns history.
    """
    output_dir = _prepare_output(run, logger)
    train_set, held_out = load_datasets(run)
    spec = build_network(run)
    params = initial_stack(run, spec)
    solver = run.solver
    LOG.info("Run {0}: {1} layers, {2} parameters, {3} training samples"
             .format(run.experiment, len(spec), spec.num_params,
                     train_set.size))
    if run.rho_search:
        rho, _, _ = pmp_solvers.find_monotone_rho(
            spec, params, train_set, solver, rho0=solver.rho)
        if rho is None:
            LOG.warning("rho search failed; keeping rho {0:g}"
                        .format(solver.rho))
        else:
            run = run.replace(rho=rho, rho_search=False, rho_star=rho)
            solver = run.solver
    write_config_echo(os.path.join(output_dir, CONFIG_ECHO_FILE), run)
    history, final = pmp_solvers.train(spec, params, train_set, solver,
                                       held_out, run.eval_every)
    write_history_csv(os.path.join(output_dir, HISTORY_FILE), history,
                      run.record_wall_time)
    write_timing_csv(os.path.join(output_dir, TIMING_FILE), history)
    save_params(output_dir, spec, final)
    if history:
        last = history[-1]
        LOG.info("Finished {0} iterations: J_train {1:.6e} status {2}"
                 .format(len(history), last.J_train, last.status))
    return history


def cmd_train(run, logger=None):
    """Divergence is a result: the exit status is 0 and the status column
    of history.csv records it.
    """
    train_run(run, logger)
    return 0


def compare_runs(run):
    """RunConfigs for compare: copies of run per --compare-methods entry,
    plus one per --compare-config file.
    """
    runs = list()
    if run.compare_methods:
        for method in run.compare_methods.split(","):
            method = method.strip()
            if method not in pmp_solvers.METHODS:
                raise pmp_utils.Fatal("unknown compare method: {0}"
                                      .format(method))
            runs.append(run.replace(method=method, command="train"))
    for path in run.compare_config or list():
        args = pmp_config.parse_args(build_parser(),
                                     ["train", "-c", path])
        runs.append(RunConfig.from_args(args))
    return runs


def cmd_compare(runs, output_dir, record_wall_time=False):
    """Train each configuration into its own sub-directory and merge the
    histories, sorted by (method, iter), into compare.csv.
    """
    if not runs:
        raise pmp_utils.Fatal("compare needs at least one run configuration")
    experiments = sorted(set(run.experiment for run in runs))
    if len(experiments) > 1:
        raise pmp_utils.Fatal("compare runs must share one experiment, got"
                              " {0}".format(", ".join(experiments)))
    merged = list()
    for i, run in enumerate(runs):
        name = "{0:02d}-{1}".format(i, run.method)
        run = run.replace(output_dir=os.path.join(output_dir, name))
        history = train_run(run)
        for report, row in zip([r for r in history if r.evaluated],
                               history_rows(history, record_wall_time)):
            merged.append(((report.method, report.iter, i), row + [name]))
    merged.sort(key=lambda item: item[0])
    if not os.path.isdir(output_dir):
        os.makedirs(output_dir)
    path = os.path.join(output_dir, COMPARE_FILE)
    pmp_utils.write_atomic(path, _csv_text(HISTORY_COLUMNS + ("run",),
                                           [row for _, row in merged]))
    LOG.info("Wrote {0} rows from {1} runs to {2}"
             .format(len(merged), len(runs), path))
    return path


def cmd_data_info(run, out=None):
    out = out or sys.stdout
    train_set, held_out = load_datasets(run)
    doc = OrderedDict([("train", train_set.describe())])
    if held_out is not None:
        doc["held_out"] = held_out.describe()
    print(pmp_yaml.dump_ordered(doc), file=out, end="")
    return 0


# Invariant suite --------------------------------------------------------------

class CheckRow(object):

    def __init__(self, name, passed, worst_error=None, detail=""):
        self.name = name
        self.passed = passed
        self.worst_error = worst_error
        self.detail = detail


def _diag_layers():
    """One small instance of every layer kind.
    """
    layer = pmp_dynamics.LayerSpec
    res_conv = pmp_dynamics.ConvShape(2, 2, 4, 4)
    proj_conv = pmp_dynamics.ConvShape(1, 2, 4, 4, pool=True)
    return [
        ("residual_dense", layer(pmp_dynamics.RESIDUAL_DENSE, 4, 4, 0.5)),
        ("projection_dense", layer(pmp_dynamics.PROJECTION, 4, 3)),
        ("classifier", layer(pmp_dynamics.CLASSIFIER, 4, 3)),
        ("residual_conv2d", layer(pmp_dynamics.RESIDUAL_CONV2D,
                                  res_conv.in_dim, res_conv.out_dim, 0.5,
                                  conv=res_conv)),
        ("projection_conv", layer(pmp_dynamics.PROJECTION, proj_conv.in_dim,
                                  proj_conv.out_dim, conv=proj_conv)),
    ]


def layer_derivative_checks(spec, rng, samples=2, rho=0.7, weight=0.1):
    """Finite-difference checks of the pullback, the parameter gradient and
    the augmented Hamiltonian gradient on one random instance of spec.
    """
    theta = rng.normal(0.0, 0.5, spec.num_params)
    x = rng.normal(size=(samples, spec.in_dim))
    p = rng.normal(size=(samples, spec.out_dim))

    def by_x(flat):
        ev = pmp_dynamics.LayerEval(spec, flat.reshape(x.shape), theta)
        return float(np.sum(p * ev.forward())), ev.pullback_x(p).ravel()

    def by_theta(vector):
        ev = pmp_dynamics.LayerEval(spec, x, vector)
        return float(np.sum(p * ev.forward())), ev.grad_theta(p)

    ctx = pmp_hamiltonian.LayerContext(
        0, spec, x, p, rng.normal(size=(samples, spec.out_dim)),
        rng.normal(size=(samples, spec.in_dim)), rho, weight)
    return [
        pmp_diagnostics.gradient_check(by_x, x.ravel()),
        pmp_diagnostics.gradient_check(by_theta, theta),
        pmp_diagnostics.gradient_check(
            lambda vector: pmp_hamiltonian.augmented_value_and_grad(
                ctx, vector), theta, atol=AUGMENTED_ATOL),
    ]


def loss_derivative_checks(rng):
    results = list()
    layer = pmp_dynamics.LayerSpec(pmp_dynamics.CLASSIFIER, 3, 4)
    for loss_kind, targets in (
            (pmp_dynamics.SUM_SQUARED, rng.normal(size=3)),
            (pmp_dynamics.CROSS_ENTROPY, np.array([0, 3, 1]))):
        spec = pmp_dynamics.NetworkSpec([layer], loss_kind)

        def loss(flat, spec=spec, targets=targets):
            values, grads = pmp_dynamics.terminal_loss(
                spec, flat.reshape(3, 4), targets)
            return float(np.sum(values)), grads.ravel()
        results.append(pmp_diagnostics.gradient_check(
            loss, rng.normal(size=12)))
    results.append(pmp_diagnostics.gradient_check(
        lambda theta: pmp_dynamics.regularizer(theta, 0.3),
        rng.normal(size=7)))
    return results


def _diag_run(run):
    if run.experiment in (SINE, CUSTOM):
        return run
    preset = PRESETS[SINE]
    return run.replace(experiment=SINE, layers=preset["layers"],
                       delta=preset["delta"], dim=preset["dim"],
                       n_train=preset["n_train"], n_test=preset["n_test"])


def run_invariant_suite(run, samples=50, instances=20, iterations=3):
    """Run every check on small instances; returns CheckRows.

    Network-level checks use the sine network of run (the sine preset for
    image experiments) on the first samples training points.
    """
    rows = list()
    rng = np.random.default_rng(run.seed)
    for name, spec in _diag_layers():
        results = list()
        for _ in range(instances):
            results.extend(layer_derivative_checks(spec, rng))
        rows.append(_merge_checks("derivatives/{0}".format(name), results))
    rows.append(_merge_checks("derivatives/losses",
                              loss_derivative_checks(rng)))

    run = _diag_run(run)
    spec = build_network(run)
    params = pmp_solvers.initial_params(spec, run.init, run.seed)
    train_set, _ = load_datasets(run.replace(n_train=max(samples, 1)))
    batch = train_set.head(samples).batch()
    solver = run.solver.replace(batch_size="full", iterations=iterations)

    identity = pmp_diagnostics.costate_identity_check(spec, params, batch)
    rows.append(CheckRow("costate_identity", identity.passed,
                         identity.worst_rel_error,
                         "p_n vs -dPhi/dx_n by central differences"))
    rows.append(_gradient_equivalence(spec, params, batch, solver))
    rows.extend(_emsa_checks(spec, params, batch, solver))
    audit = pmp_diagnostics.costate_norm_audit(spec, params, batch)
    rows.append(CheckRow("costate_norm_bound", audit.passed,
                         None, "min relative slack {0:.3e}"
                         .format(min(audit.margins))))
    if run.hessian:
        spectrum = pmp_diagnostics.hessian_spectrum(spec, params, batch)
        rows.append(CheckRow(
            "hessian_spectrum", True, None,
            "{0} negative, {1} near zero, {2} positive"
            .format(spectrum.n_negative, spectrum.n_zero,
                    spectrum.n_positive)))
    return rows


def _merge_checks(name, results):
    worst = max(result.worst_rel_error for result in results)
    passed = all(result.passed for result in results)
    return CheckRow(name, passed, worst,
                    "{0} finite-difference checks".format(len(results)))


def _gradient_equivalence(spec, params, batch, solver, eta=1e-3):
    """grad_msa and momentum-free sgd must produce identical iterates.
    """
    config = solver.replace(method=pmp_solvers.SGD, eta=eta, momentum=0.0)
    state = pmp_solvers.BaselineState()
    by_msa = params
    by_sgd = params
    deviation = 0.0
    for k in range(solver.iterations):
        by_msa, _ = pmp_solvers.grad_msa_iteration(spec, by_msa, batch,
                                                   config, k)
        by_sgd, _ = pmp_solvers.baseline_iteration(spec, by_sgd, batch,
                                                   config, state, k)
        deviation = max(deviation, float(np.max(np.abs(
            by_msa.flat() - by_sgd.flat()))))
    return CheckRow("grad_msa_equals_sgd", deviation <= 1e-12, deviation,
                    "max abs parameter deviation over {0} iterations"
                    .format(solver.iterations))


def _emsa_checks(spec, params, batch, solver):
    history = list()
    agreement = 0.0
    current = params
    for k in range(solver.iterations):
        traj = pmp_propagation.forward_propagate(spec, current, batch)
        costates = pmp_propagation.backward_propagate(spec, current, traj,
                                                      batch.targets)
        ctxs = pmp_hamiltonian.build_contexts(spec, current, traj, costates,
                                              solver.rho)
        following, report = pmp_solvers.emsa_iteration(
            spec, current, batch, solver, k)
        recomputed = pmp_diagnostics.mu_k(spec, ctxs, current, following)
        agreement = max(agreement, abs(recomputed - report.mu_k))
        history.append(report)
        if report.status != pmp_diagnostics.STATUS_OK:
            break
        current = following
    statuses_ok = all(r.status == pmp_diagnostics.STATUS_OK for r in history)
    min_mu = min(r.mu_k for r in history)
    lemma = pmp_diagnostics.lemma1_audit(history)
    return [
        CheckRow("emsa_status", statuses_ok, None,
                 ", ".join(r.status for r in history)),
        CheckRow("mu_k_nonnegative", statuses_ok and min_mu >= -1e-12,
                 None, "min mu_k {0:.3e}".format(min_mu)),
        CheckRow("mu_k_agreement", agreement <= 1e-12, agreement,
                 "report vs recomputed"),
        CheckRow("lemma1_audit", lemma.passed, None,
                 "max C_min {0:.3e}, flags {1}"
                 .format(lemma.max_c_min, lemma.flags)),
    ]


def cmd_diag(run, out=None):
    """Print the invariant table; exit status 1 when any check fails.
    """
    out = out or sys.stdout
    try:
        rows = run_invariant_suite(run)
    except pmp_utils.PMPError as err:
        raise pmp_utils.Fatal("invariant suite aborted: {0}".format(err))
    table = [["check", "result", "worst_error", "detail"]]
    for row in rows:
        worst = "-" if row.worst_error is None else \
            "{0:.3e}".format(row.worst_error)
        table.append([row.name, "PASS" if row.passed else "FAIL", worst,
                      row.detail])
    for line in pmp_utils.format_columns(table):
        print(line, file=out)
    failed = [row.name for row in rows if not row.passed]
    if failed:
        LOG.error("failed checks: {0}".format(", ".join(failed)))
        return 1
    return 0


def run_command(run, logger=None):
    """Dispatch run.command; returns the exit status.
    """
    if run.command == "train":
        return cmd_train(run, logger)
    if run.command == "diag":
        return cmd_diag(run)
    if run.command == "compare":
        _prepare_output(run, logger)
        cmd_compare(compare_runs(run), run.output_dir, run.record_wall_time)
        return 0
    if run.command == "data-info":
        return cmd_data_info(run)
    raise pmp_utils.Fatal("unknown command: {0}".format(run.command))
