"""Python bindings for the repblend C++ core."""

import json

from . import _repblend
from ._repblend import (
    assign_bin,
    average_precision,
    blend_batch,
    build_prototypes,
    drop_labels,
    evaluate_scores,
    f1_measures,
    partial_bce,
)


def default_config():
    return json.loads(_repblend.default_config())


def sweep(config=None, **overrides):
    """Run a sweep from a config dict; returns the parsed report."""
    cfg = default_config() if config is None else config
    for key, value in overrides.items():
        node = cfg
        parts = key.split("__")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return json.loads(_repblend.sweep(json.dumps(cfg)))


__all__ = [
    "assign_bin",
    "average_precision",
    "blend_batch",
    "build_prototypes",
    "default_config",
    "drop_labels",
    "evaluate_scores",
    "f1_measures",
    "partial_bce",
    "sweep",
]
