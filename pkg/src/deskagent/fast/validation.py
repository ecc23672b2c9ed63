"""Input checks for the fast-policy estimators."""
from __future__ import annotations

from typing import Sequence

from ..grammar import Catalog, GrammarError
from .context import parse_context


def check_contexts(X: Sequence[str]) -> list[str]:
    if isinstance(X, str):
        raise TypeError("expected a sequence of serialized contexts, got a single string")
    X = list(X)
    if not X:
        raise ValueError("at least one context is required")
    for i, x in enumerate(X):
        if not isinstance(x, str):
            raise TypeError(f"context {i} is {type(x).__name__}, expected str")
        if "\n" in x:
            raise ValueError(f"context {i} spans several lines")
        try:
            parse_context(x)
        except ValueError as exc:
            raise ValueError(f"context {i}: {exc}") from None
    return X


def check_targets(y: Sequence[str], n: int, catalog: Catalog) -> list[str]:
    y = list(y)
    if len(y) != n:
        raise ValueError(f"got {n} contexts but {len(y)} targets")
    for i, t in enumerate(y):
        try:
            catalog.parse_surface(t)
        except GrammarError as exc:
            raise ValueError(f"target {i}: {exc}") from None
    return y
