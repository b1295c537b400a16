# vim: set fileencoding=utf-8 :

"""PMPTrain PyYAML utility functions: ordered, block-style dumps for the
config echo, the parameter manifest and data-info.
"""

# Standard library
from __future__ import absolute_import, division, print_function
from collections import OrderedDict

# Third-party
import yaml


def odict_rep(dumper, data):
    """Represent an OrderedDict as a plain mapping, keys in insertion order.

    represent_mapping only sorts objects with an items() method, so handing
    it the item list keeps the order.
    """
    return dumper.represent_mapping(u"tag:yaml.org,2002:map",
                                    list(data.items()))


yaml.SafeDumper.add_representer(OrderedDict, odict_rep)


def dump_ordered(doc):
    """Dump doc (possibly nested OrderedDicts) as block-style YAML.
    """
    return yaml.safe_dump(doc, indent=4, default_flow_style=False)


def load(text):
    return yaml.safe_load(text)
