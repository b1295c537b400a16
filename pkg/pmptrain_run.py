#!/usr/bin/env python
# vim: set fileencoding=utf-8 :

"""Train residual networks with the method of successive approximations,
run the invariant suite, compare methods or describe the datasets.
"""

# Standard library
from __future__ import absolute_import, division, print_function
import logging
import sys

# Local/library specific
from pmptrain.cli import v1 as pmp_cli
from pmptrain.config import v1 as pmp_config
from pmptrain.logging import v1 as pmp_logging
from pmptrain.utils import v1 as pmp_utils


LOG = logging.getLogger(__name__)


def setup(argv=None):
    """Instantiate and configure configargparse and logging.

    Return (RunConfig, PMPLogging).
    """
    cap = pmp_cli.build_parser()
    logger = pmp_logging.PMPLogging(cap.prog, log_level=logging.INFO)
    args = pmp_config.parse_args(cap, argv)
    logger.set_log_level(args.verbosity)
    LOG.debug("args.program_name: {0}".format(args.program_name))
    return pmp_cli.RunConfig.from_args(args), logger


def main(argv=None):
    run, logger = setup(argv)
    return pmp_cli.run_command(run, logger)


if __name__ == "__main__":
    try:
        sys.exit(main())
    except SystemExit as e:
        sys.exit(e.code)
    except KeyboardInterrupt:
        pmp_utils.log_ctrlc_and_exit()
    except pmp_utils.Fatal:
        pmp_utils.log_fatal_and_exit()
    except:
        pmp_utils.log_exception_and_exit()
