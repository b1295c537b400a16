# vim: set fileencoding=utf-8 :

"""Unit Tests
"""

# Standard Library
from __future__ import absolute_import, division, print_function
import os.path
import sys

# Third-party
import pytest

# Local/library specific
from pmptrain.config import v1 as pmp_config


@pytest.fixture(scope="function")
def prog(request):
    prog = os.path.basename(sys.argv[0])
    return prog


def test_cap_simple(prog):
    # GIVEN pmp_config
    # WHEN intialized without default_config_files
    cap = pmp_config.PMPConfigArgParse()
    # THEN cap object's default_config_files should contain only the per-user
    #      default and
    #      cap object's add_config_file_help should be False
    #      cap object's ignore_unknown_config_file_keys should be True
    assert cap._default_config_files == [pmp_config.default_config_path(prog)]
    assert cap._add_config_file_help is False
    assert cap._ignore_unknown_config_file_keys is True


def test_cap_with_default_config_files(prog):
    # GIVEN specified conf_files
    conf_files = ["/conf1", ".conf2"]
    # WHEN intialized with specified default_config_files
    cap = pmp_config.PMPConfigArgParse(default_config_files=conf_files)
    # THEN the per-user default is appended after the specified files
    assert cap._default_config_files == [
        "/conf1", ".conf2", pmp_config.default_config_path(prog)]


def test_config_basic(prog):
    # GIVEN config and verbosity arguments
    add_args = {"config": True, "verbosity": True}
    cap = pmp_config.PMPConfigArgParse(add_args=add_args)
    # WHEN command line arguments are empty
    args = pmp_config.parse_args(cap, args=[])
    # THEN the namespace holds config, program_name and verbosity
    assert len(args._get_kwargs()) == 3
    assert args.config is None
    assert args.program_name == prog
    assert args.verbosity is None


def test_config_verbosity():
    # GIVEN verbosity arguments
    cap = pmp_config.PMPConfigArgParse(add_args={"verbosity": True})
    # WHEN command line has five quiet flags and five verbose flags
    args = pmp_config.parse_args(cap, args=["-q"] * 5 + ["-v"] * 5)
    # THEN the flags are collected in order
    assert args.verbosity == [10] * 5 + [-10] * 5


def test_output_dir_from_environment(monkeypatch):
    # GIVEN the output directory environment variable
    monkeypatch.setenv(pmp_config.OUTPUT_DIR_ENV, "/tmp/from-env")
    cap = pmp_config.PMPConfigArgParse(add_args={"output": True})
    # WHEN no --output-dir is given
    args = pmp_config.parse_args(cap, args=[])
    # THEN the environment value is used
    assert args.output_dir == "/tmp/from-env"
    # WHEN --output-dir is given
    args = pmp_config.parse_args(cap, args=["-o", "cli-dir"])
    # THEN the command line wins
    assert args.output_dir == "cli-dir"


def test_config_file_yaml(tmpdir):
    # GIVEN a flat YAML config file
    path = tmpdir.join("run.yaml")
    path.write("rho: 2.5\nunknown-key: 1\n")
    cap = pmp_config.PMPConfigArgParse(add_args={"config": True})
    cap.add_argument("--rho", type=float)
    # WHEN the file is passed with -c
    args = pmp_config.parse_args(cap, args=["-c", str(path)])
    # THEN its values are read and unknown keys are ignored
    assert args.rho == 2.5


@pytest.mark.parametrize("value,expected", [
    ("1", 1),
    ("64", 64),
    ("full", "full"),
    ("FULL", "full"),
])
def test_batch_size(value, expected):
    assert pmp_config.batch_size(value) == expected


@pytest.mark.parametrize("value", ["0", "-3", "ten"])
def test_positive_int_rejects(value):
    with pytest.raises(pmp_config.ArgumentTypeError):
        pmp_config.positive_int(value)


@pytest.mark.parametrize("option,value", [
    ("--rho", "-1"),
    ("--armijo-c", "1.0"),
    ("--momentum", "1.0"),
])
def test_range_checks(option, value):
    # GIVEN a parser with a numeric hyper-parameter
    cap = pmp_config.PMPConfigArgParse()
    cap.add_argument(option, type=float)
    # WHEN the value is out of range
    # THEN parsing exits
    with pytest.raises(SystemExit):
        pmp_config.parse_args(cap, args=[option, value])


def test_mnist_experiment_requires_idx_paths():
    # GIVEN a parser with experiment and data options
    cap = pmp_config.PMPConfigArgParse()
    cap.add_argument("--experiment")
    cap.add_argument("--train-images")
    cap.add_argument("--train-labels")
    # WHEN an MNIST-style experiment is selected without data
    # THEN parsing exits
    with pytest.raises(SystemExit):
        pmp_config.parse_args(cap, args=["--experiment", "mnist_dense"])
    # WHEN the paths are given
    args = pmp_config.parse_args(cap, args=[
        "--experiment", "mnist_dense", "--train-images", "a",
        "--train-labels", "b"])
    # THEN parsing succeeds
    assert args.train_images == "a"
