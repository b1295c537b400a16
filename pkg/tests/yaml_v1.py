# vim: set fileencoding=utf-8 :

"""Unit Tests
"""

# Standard Library
from __future__ import absolute_import, division, print_function
from collections import OrderedDict

# Third-party
import yaml

# Local/library specific
from pmptrain.yaml import v1 as pmp_yaml


YAML_DOC = """---
experiment: sine
layers: 20
compare-config:
- a.yaml
- b.yaml
ascent:
    max_iters: 10
    armijo_c: 0.0001
"""


def test_odict_dumper():
    # GIVEN an OrderedDict data structure
    odict = OrderedDict()
    odict["experiment"] = "sine"
    odict["layers"] = 20
    odict["compare-config"] = ["a.yaml", "b.yaml"]
    odict["ascent"] = OrderedDict([("max_iters", 10), ("armijo_c", 1e-4)])
    # WHEN the custom representer is loaded
    yaml.SafeDumper.add_representer(OrderedDict, pmp_yaml.odict_rep)
    # THEN a yaml dump of the OrderedDict should keep insertion order
    doc = yaml.safe_dump(odict, default_flow_style=False, explicit_start=True,
                         indent=4)
    assert doc == YAML_DOC


def test_dump_ordered_loads_back():
    # GIVEN a nested OrderedDict
    odict = OrderedDict([("rho", 2.0), ("batch-size", "full"),
                         ("record-wall-time", False)])
    # WHEN it is dumped and loaded
    doc = pmp_yaml.dump_ordered(odict)
    # THEN keys should appear in insertion order and values survive
    assert doc.index("rho") < doc.index("batch-size")
    assert pmp_yaml.load(doc) == dict(odict)
