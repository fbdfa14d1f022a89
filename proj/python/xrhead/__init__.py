"""Python bindings for the xrhead prediction-head library.

Arrays are float64 numpy arrays; configs and specs are plain dicts whose keys
match the C++ TrainConfig / SyntheticSpec field names.
"""

import csv
import io
import json

from ._xrhead import (
    ConfigError,
    DataError,
    DegenerateInputError,
    DimensionError,
    FormatError,
    NumericError,
    align_predict,
    analyze_embeddings,
    cross_relation,
    normalize_attention,
    pwcs_predict,
    scale_norm,
)
from . import _xrhead

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateInputError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "align_predict",
    "analyze_embeddings",
    "compare_heads",
    "cross_relation",
    "generate_dataset",
    "gradcheck",
    "normalize_attention",
    "pwcs_predict",
    "scale_norm",
    "sweep_parts",
    "train",
]


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def generate_dataset(spec=None):
    return _xrhead.generate_dataset(json.dumps(spec or {}))


def train(config=None):
    """Trains one model and returns its run report as a dict."""
    return json.loads(_xrhead.train(json.dumps(config or {})))


def compare_heads(config, heads, seeds):
    """Returns (per-run rows, per-head summary rows) as lists of dicts."""
    runs, summary = _xrhead.compare_heads(json.dumps(config or {}), list(heads), seeds)
    return _rows(runs), _rows(summary)


def sweep_parts(config, parts):
    return _rows(_xrhead.sweep_parts(json.dumps(config or {}), list(parts)))


def gradcheck(config, eps=1e-5):
    """Max relative finite-difference error per trainable parameter group."""
    return dict(_xrhead.pipeline_gradcheck(json.dumps(config or {}), eps))
