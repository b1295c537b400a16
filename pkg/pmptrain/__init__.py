# vim: set fileencoding=utf-8 :
"""Train residual networks by solving the discrete maximum principle.
"""

__version__ = "0.3.0"

__maintainer__ = "Timid Robot Zehta"

__maintainer_email__ = "tim@clockwork.com"

__url__ = "https://github.com/ClockworkNet/PMPTrain"

__license__ = "MIT"
