# vim: set fileencoding=utf-8 :

"""Unit Tests
"""

# Standard Library
from __future__ import absolute_import, division, print_function
import logging
import os.path
import sys

# Third-party
import pytest

# Local/library specific
from pmptrain.logging import v1 as pmp_logging


@pytest.fixture(scope="function")
def pmplog(request):
    log_level = logging.getLogger().getEffectiveLevel()
    prog = os.path.basename(sys.argv[0])
    pmplog = pmp_logging.PMPLogging(prog)

    def teardown():
        pmplog.remove_file_handler()
        pmplog.logger.removeHandler(pmplog.handler_screen)
        pmplog.logger.setLevel(log_level)

    request.addfinalizer(teardown)

    return pmplog


def test_logger_instance_creation(pmplog):
    # GIVEN pmp_logging initialization
    # WHEN nothing else is done
    # THEN there should be no filters and
    #      the screen handler should be present and
    #      there should be no file handler
    assert len(pmplog.logger.filters) == 0
    assert pmplog.handler_screen in pmplog.logger.handlers
    assert pmplog.handler_file is None


def test_set_log_level__num_log_level_above_max(pmplog):
    # GIVEN pmp_logging initialization
    # WHEN set_log_level function is invoked with a verbosity total well above
    #      the maximum allowed by the function (50 CRITICAL)
    ten_quiet_flags = [10] * 10
    pmplog.set_log_level(ten_quiet_flags)
    # THEN the log level should be CRITICAL
    assert pmplog.logger.getEffectiveLevel() == logging.CRITICAL


def test_set_log_level__num_log_level_below_min(pmplog):
    # GIVEN pmp_logging initialization
    # WHEN set_log_level function is invoked with a verbosity total well below
    #      the minimum allowed by the function (10 DEBUG)
    ten_verbose_flags = [-10] * 10
    pmplog.set_log_level(ten_verbose_flags)
    # THEN the log level should be DEBUG
    assert pmplog.logger.getEffectiveLevel() == logging.DEBUG


def test_set_log_level__no_flags(pmplog):
    # GIVEN pmp_logging initialization at WARNING
    # WHEN set_log_level is invoked without flags
    pmplog.set_log_level(None)
    # THEN the log level should be unchanged
    assert pmplog.logger.getEffectiveLevel() == logging.WARNING


def test_file_handler(pmplog, tmpdir):
    # GIVEN a run-log path
    log_path = os.path.join(str(tmpdir), "run.log")
    # WHEN a file handler is added, a warning logged and the handler removed
    pmplog.add_file_handler(log_path)
    handler = pmplog.handler_file
    logging.getLogger("pmptrain.solvers.v1").warning("iteration 3 diverged")
    pmplog.remove_file_handler()
    # THEN the run log should hold the prefixed message and
    #      the handler should be detached
    with open(log_path) as log_fo:
        text = log_fo.read()
    assert "WARNING iteration 3 diverged" in text
    assert text.startswith(pmplog.program_name)
    assert handler not in pmplog.logger.handlers
    assert pmplog.handler_file is None


def test_file_handler_replaced(pmplog, tmpdir):
    # GIVEN a file handler for a first run
    pmplog.add_file_handler(os.path.join(str(tmpdir), "first.log"))
    first = pmplog.handler_file
    # WHEN a second handler is added
    pmplog.add_file_handler(os.path.join(str(tmpdir), "second.log"))
    # THEN only the second one should be attached
    assert first not in pmplog.logger.handlers
    assert pmplog.handler_file in pmplog.logger.handlers
