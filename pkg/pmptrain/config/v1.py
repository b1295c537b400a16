# vim: set fileencoding=utf-8 :

"""PMPTrain configuration library (thin wrapper over ConfigArgParse)
"""

# Standard library
from __future__ import absolute_import, division, print_function
import os.path
import sys

# Third-party
import configargparse


# Add the public classes and constants from configargparse module's namespace
# (which wraps argparse module's namespace) so that scripts that use this
# library do not need to also load it
ArgumentDefaultsHelpFormatter = configargparse.ArgumentDefaultsHelpFormatter
ArgumentError = configargparse.ArgumentError
ArgumentTypeError = configargparse.ArgumentTypeError
Namespace = configargparse.Namespace
SUPPRESS = configargparse.SUPPRESS

OUTPUT_DIR_ENV = "PMPTRAIN_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "pmptrain-out"


def default_config_path(prog):
    conf_name = "{0}.yaml".format(os.path.splitext(prog)[0])
    return os.path.join(os.path.expanduser("~/.config/pmptrain"), conf_name)


def PMPConfigArgParse(**kwargs):
    """Wrap configargparse.ArgumentParser so that:
    - default_config_files includes ~/.config/pmptrain/SCRIPTNAME.yaml
    - config files are flat YAML with keys mirroring the long options
    - add_config_file_help defaults to False
    - ignore_unknown_config_file_keys defaults to True
    - provide shorthand for adding common arguments (add_args)

    Returns ArgumentParser object
    """
    add_args = kwargs.pop("add_args", dict())
    prog = os.path.basename(sys.argv[0])
    default_conf_path = default_config_path(prog)
    add_program_name = "program_name" not in kwargs
    kwargs.setdefault("add_config_file_help", False)
    kwargs.setdefault("config_file_parser_class",
                      configargparse.YAMLConfigFileParser)
    if "default_config_files" not in kwargs:
        kwargs["default_config_files"] = [default_conf_path]
    else:
        kwargs["default_config_files"] += [default_conf_path]
        default_conf_path = kwargs["default_config_files"]
    kwargs.setdefault("ignore_unknown_config_file_keys", True)

    cap = configargparse.ArgumentParser(**kwargs)

    # add_args
    if add_args.get("config") is True:
        cap.add_argument("-c", "--config", is_config_file=True,
                         help="Config file path. Default: {0}"
                         .format(default_conf_path))
    if add_args.get("verbosity") is True:
        cap.add_argument("-q", "--quiet", action="append_const", const=10,
                         dest="verbosity",
                         help="Decrease verbosity. Can be specified multiple"
                         " times.")
        cap.add_argument("-v", "--verbose", action="append_const", const=-10,
                         dest="verbosity",
                         help="Increase verbosity. Can be specified multiple"
                         " times.")
    if add_args.get("output") is True:
        cap.add_argument("-o", "--output-dir", metavar="DIR",
                         env_var=OUTPUT_DIR_ENV, default=DEFAULT_OUTPUT_DIR,
                         help="Directory receiving history.csv, params and"
                         " the config echo. Default: %(default)s")
        cap.add_argument("--record-wall-time", action="store_true",
                         help="Write measured seconds to the wall_time_s"
                         " column of history.csv (otherwise 0.0, which keeps"
                         " repeated runs byte-identical).")

    # miscellaneous
    if add_program_name:
        cap.set_defaults(program_name=prog)

    return cap


def positive_int(value):
    """argparse type: integer >= 1.
    """
    try:
        number = int(value)
    except (TypeError, ValueError):
        raise ArgumentTypeError("not an integer: {0}".format(value))
    if number < 1:
        raise ArgumentTypeError("must be >= 1: {0}".format(value))
    return number


def batch_size(value):
    """argparse type: positive integer or the word "full".
    """
    if str(value).lower() == "full":
        return "full"
    return positive_int(value)


# (dest, predicate, description) checked by parse_args when dest is present
_RANGES = (
    ("rho", lambda v: v >= 0, "must be >= 0"),
    ("eta", lambda v: v > 0, "must be > 0"),
    ("armijo_c", lambda v: 0 < v < 1, "must be in (0, 1)"),
    ("backtrack_factor", lambda v: 0 < v < 1, "must be in (0, 1)"),
    ("grad_tol", lambda v: v >= 0, "must be >= 0"),
    ("delta", lambda v: v > 0, "must be > 0"),
    ("regularizer_weight", lambda v: v >= 0, "must be >= 0"),
    ("momentum", lambda v: 0 <= v < 1, "must be in [0, 1)"),
    ("beta1", lambda v: 0 <= v < 1, "must be in [0, 1)"),
    ("beta2", lambda v: 0 <= v < 1, "must be in [0, 1)"),
    ("adagrad_eps", lambda v: v > 0, "must be > 0"),
    ("adam_eps", lambda v: v > 0, "must be > 0"),
    ("iterations", lambda v: v >= 0, "must be >= 0"),
    ("seed", lambda v: v >= 0, "must be >= 0"),
)

MNIST_EXPERIMENTS = ("mnist_dense", "mnist_conv", "fashion_conv")


def parse_args(cap, args=None, namespace=None):
    """Wrap parse_args to allow additional logic:
    - range checks of numeric hyper-parameters
    - IDX file paths required for the MNIST-style experiments
    """
    args = cap.parse_args(args=args, namespace=namespace)
    for dest, check, description in _RANGES:
        value = getattr(args, dest, None)
        if value is None:
            continue
        if not check(value):
            option = "--{0}".format(dest.replace("_", "-"))
            cap.error("argument {0}: {1}, got {2}"
                      .format(option, description, value))
    experiment = getattr(args, "experiment", None)
    command = getattr(args, "command", None)
    if experiment in MNIST_EXPERIMENTS and command != "diag":
        for dest in ("train_images", "train_labels"):
            if not getattr(args, dest, None):
                cap.error("argument --{0} is required for the {1} experiment"
                          .format(dest.replace("_", "-"), experiment))
    return args
