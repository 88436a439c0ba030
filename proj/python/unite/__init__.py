"""Python bindings for the unite detector core."""

import json

from ._unite import (
    DataError,
    DimensionError,
    NumericError,
    ParseError,
    UniteError,
    ValidationError,
    default_synth_spec,
    format_run_config,
    forward,
    gradcheck,
    load_embeddings,
    metrics,
    positional_encoding,
    synth,
    train,
    write_embeddings,
)
from ._unite import evaluate as _evaluate


def evaluate(checkpoint, manifest, mode="binary", split="test", frames=0, stride=2):
    """Score a manifest split. Returns (reports, scores_csv_text)."""
    reports, scores = _evaluate(str(checkpoint), str(manifest), mode, split, frames, stride)
    return json.loads(reports), scores


__all__ = [
    "DataError",
    "DimensionError",
    "NumericError",
    "ParseError",
    "UniteError",
    "ValidationError",
    "default_synth_spec",
    "evaluate",
    "format_run_config",
    "forward",
    "gradcheck",
    "load_embeddings",
    "metrics",
    "positional_encoding",
    "synth",
    "train",
    "write_embeddings",
]
