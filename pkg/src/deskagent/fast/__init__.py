"""Fast (imitation-learned) policy: context serialization, datasets, estimators."""
from __future__ import annotations

from .context import WINDOW, SwiftContext, parse_context, serialize_context
from .dataset import (
    DATASET_SCHEMA,
    BalanceConfig,
    DatasetError,
    ImitationExample,
    build_dataset,
    load_examples,
    save_examples,
)
from .policy import FastPolicy, PredictionError, RetrievalPolicy, SubprocessPolicy

__all__ = [
    "WINDOW", "SwiftContext", "parse_context", "serialize_context",
    "DATASET_SCHEMA", "BalanceConfig", "DatasetError", "ImitationExample",
    "build_dataset", "load_examples", "save_examples",
    "FastPolicy", "PredictionError", "RetrievalPolicy", "SubprocessPolicy",
]
