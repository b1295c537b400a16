# vim: set fileencoding=utf-8 :

"""PMPTrain utilities library
"""

# Standard Library
from __future__ import absolute_import, division, print_function
from signal import signal, SIGPIPE, SIG_DFL
import logging
import os
import sys
import tempfile
import traceback

# Third-party
import numpy as np


LOG = logging.getLogger(__name__)
# Ignore SIG_PIPE and don't throw exceptions on it (history piped to head)
signal(SIGPIPE, SIG_DFL)


class Fatal(Exception):
    def __init__(self, message, code=None):
        self.code = code if code else 1
        message = "({0}) {1}".format(self.code, message)
        super(Fatal, self).__init__(message)


class PMPError(Exception):
    """Base class of all library errors.
    """


class RejectedInputError(PMPError, ValueError):
    """Shapes, dimensions, or arguments that do not fit the network.
    """


class NumericError(PMPError, ArithmeticError):
    """Non-finite value encountered, optionally at a known layer.
    """

    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = "layer {0}: {1}".format(layer, message)
        super(NumericError, self).__init__(message)


class ParseError(PMPError, ValueError):
    """Malformed binary input; offset is the first offending byte.
    """

    def __init__(self, message, offset):
        self.offset = offset
        message = "{0} (at byte offset {1})".format(message, offset)
        super(ParseError, self).__init__(message)


def _check_logging():
    """INTERNAL/PRIVATE
    Check for logging handlers.
    """
    if LOG.handlers:
        return True
    elif logging.getLogger().handlers:
        return True
    return False


def check_finite(array, what, layer=None):
    """Raise NumericError unless every entry of array is finite.
    """
    if not np.all(np.isfinite(array)):
        raise NumericError("non-finite {0}".format(what), layer)
    return array


def format_columns(rows, align=None):
    """Lay out rows (lists of cells) as aligned text lines, like `column -t`.

    align holds one of "<" (default) or ">" per column. The last column
    carries no trailing whitespace.
    """
    cells = [[str(cell) for cell in row] for row in rows]
    widths = [max(len(cell) for cell in column) for column in zip(*cells)]
    align = align or ["<"] * len(widths)
    lines = list()
    for row in cells:
        padded = [cell.rjust(width) if how in (">", "r") else
                  cell.ljust(width)
                  for cell, width, how in zip(row, widths, align)]
        lines.append("  ".join(padded).rstrip())
    return lines


def log_ctrlc_and_exit():
    print(file=sys.stderr)
    if _check_logging():
        LOG.info("(130) Halted via KeyboardInterrupt.")
    else:
        print("CRITICAL No handlers could be found for logger \"{0}\""
              .format(__name__), file=sys.stderr)
        print("INFO (130) Halted via KeyboardInterrupt.", file=sys.stderr)
    sys.exit(130)


def log_exception():
    if _check_logging():
        LOG.exception("Unhandled exception:")
    else:
        print("CRITICAL No handlers could be found for logger \"{0}\""
              .format(__name__), file=sys.stderr)
        print("ERROR Unhandled exception:\n{0}".format(traceback.format_exc()),
              file=sys.stderr)


def log_exception_and_exit(exit_status=1):
    log_exception()
    sys.exit(exit_status)


def log_fatal_and_exit():
    exc_type, exc_value, exc_traceback = sys.exc_info()
    if _check_logging():
        LOG.critical(exc_value)
    else:
        print("CRITICAL No handlers could be found for logger \"{0}\""
              .format(__name__), file=sys.stderr)
        print("CRITICAL {0}".format(exc_value), file=sys.stderr)
    sys.exit(exc_value.code)


def write_tempfile(directory, content, mode="w"):
    file_temp_fd, file_temp_name = tempfile.mkstemp(dir=directory)
    LOG.debug("Created temp file: {0}".format(file_temp_name))
    with os.fdopen(file_temp_fd, mode) as file_temp_fo:
        file_temp_fo.write(content)
    return file_temp_name


def write_atomic(file_path, content, mode="w"):
    """Write content to file_path via a temp file in the same directory so
    readers never observe a partially written artifact.

    :param file_path - Full or relative path to the target file
    :param content - str (mode "w") or bytes (mode "wb")
    """
    file_dir = os.path.dirname(os.path.abspath(file_path))
    file_temp_name = write_tempfile(file_dir, content, mode)
    try:
        os.chmod(file_temp_name, 0o644)
        os.rename(file_temp_name, file_path)
    except OSError:
        LOG.error("Renaming temp file failed. Deleting temp file")
        os.unlink(file_temp_name)
        raise
    LOG.debug("Wrote {0}".format(file_path))
    return file_path
