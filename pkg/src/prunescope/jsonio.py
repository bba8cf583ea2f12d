"""Deterministic JSON serialization.

Reports, mappings, plans, and loss outputs must be byte-identical across
re-runs, so floats are always printed with 17 significant digits (enough
to round-trip any IEEE-754 double) instead of the shortest-repr form the
stdlib encoder picks.
"""

import json

import numpy as np


def _format(value, parts, indent, level):
    pad = " " * (indent * level)
    if isinstance(value, dict):
        if not value:
            parts.append("{}")
            return
        parts.append("{\n")
        for i, (key, item) in enumerate(value.items()):
            parts.append(pad + " " * indent + json.dumps(str(key)) + ": ")
            _format(item, parts, indent, level + 1)
            parts.append(",\n" if i < len(value) - 1 else "\n")
        parts.append(pad + "}")
    elif isinstance(value, (list, tuple, np.ndarray)):
        seq = list(value)
        if not seq:
            parts.append("[]")
            return
        parts.append("[")
        for i, item in enumerate(seq):
            _format(item, parts, indent, level + 1)
            if i < len(seq) - 1:
                parts.append(", ")
        parts.append("]")
    elif isinstance(value, bool) or isinstance(value, np.bool_):
        parts.append("true" if value else "false")
    elif value is None:
        parts.append("null")
    elif isinstance(value, (int, np.integer)):
        parts.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        parts.append(format(float(value), ".17g"))
    elif isinstance(value, str):
        parts.append(json.dumps(value))
    else:
        raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(obj, indent=2):
    parts = []
    _format(obj, parts, indent, 0)
    return "".join(parts) + "\n"


def dump(obj, path, indent=2):
    with open(path, "w") as fh:
        fh.write(dumps(obj, indent=indent))


def load(path):
    with open(path) as fh:
        return json.load(fh)
