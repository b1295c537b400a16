# vim: set fileencoding=utf-8 :

"""PMPTrain logging library
"""

# Standard Library
from __future__ import absolute_import, division, print_function
import logging


class PMPLogging(object):
    """PMPTrain logging wrapper.
    """

    def __init__(self, program_name, log_level=logging.WARNING):
        """Initialize logging with a screen handler. A run-log file handler
        is attached later, once the output directory is known.
        """
        self.program_name = program_name
        self.handler_file = None

        # Set up the logging system
        self.logger = logging.getLogger()
        self.logger.setLevel(log_level)

        # Screen Handler
        self.handler_screen = logging.StreamHandler()
        format_string = "%(levelname)s %(message)s"
        screen_format = logging.Formatter(format_string)
        self.handler_screen.setFormatter(screen_format)
        self.logger.addHandler(self.handler_screen)

    def add_file_handler(self, log_path):
        """Log to log_path in addition to the screen. Replaces any previous
        file handler.
        """
        self.remove_file_handler()
        self.handler_file = logging.FileHandler(log_path, mode="w")
        format_string = "{0} %(asctime)s %(levelname)s %(message)s".format(
            self.program_name)
        file_format = logging.Formatter(format_string)
        self.handler_file.setFormatter(file_format)
        self.logger.addHandler(self.handler_file)

    def set_log_level(self, verbosity):
        """Set logging level based on verbosity level (list of +10/-10 values
        accumulated from -q/-v flags).
        """
        if not verbosity:
            return
        log_level = self.logger.getEffectiveLevel()
        for v in verbosity:
            log_level += v
        if log_level < 10:
            log_level = 10
        if log_level > 50:
            log_level = 50
        self.logger.setLevel(log_level)

    def remove_file_handler(self):
        """Remove logging to the run-log file.
        """
        if self.handler_file is None:
            return
        self.logger.removeHandler(self.handler_file)
        self.handler_file.close()
        self.handler_file = None
