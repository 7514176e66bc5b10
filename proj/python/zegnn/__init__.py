"""Thermodynamic regime-mixture spatial regression."""

import json

from ._core import (
    Dataset,
    DivergenceError,
    Model,
    ZegnnError,
    __version__,
    generate_scenario,
    load_dataset,
    morans_i,
)
from ._core import cross_validate as _cross_validate

__all__ = [
    "Dataset",
    "DivergenceError",
    "Model",
    "ZegnnError",
    "__version__",
    "cross_validate",
    "generate_scenario",
    "load_dataset",
    "morans_i",
]


def cross_validate(data, model="zegnn", protocol="spatial", **kwargs):
    """Cross-validated report for one model and fold protocol, as a dict."""
    return json.loads(_cross_validate(data, model=model, protocol=protocol, **kwargs))
