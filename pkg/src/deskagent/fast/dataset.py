"""Imitation examples built from oracle trajectories."""
from __future__ import annotations

import fnmatch
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..grammar import Catalog
from ..oracle import Trajectory
from .context import WINDOW, SwiftContext, serialize_context

DATASET_SCHEMA = "deskagent.imitation/1"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ImitationExample:
    id: int
    context_text: str
    target: str
    task_family: str
    variation_id: str = ""
    step: int = 0
    weight: float = 1.0


@dataclass(frozen=True)
class BalanceConfig:
    """How to thin an imitation dataset.

    ``max_trajectories_per_family`` caps how many trajectories each family
    may contribute (``family_caps`` overrides it per family). ``downsample``
    maps a glob over target surfaces (``"close *"``) to a keep rate in
    [0, 1]; ``downweight`` maps a glob to a weight multiplier for the
    examples that survive.
    """

    max_trajectories_per_family: int | None = None
    family_caps: Mapping[str, int] = field(default_factory=dict)
    downsample: Mapping[str, float] = field(default_factory=dict)
    downweight: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def cap_for(self, family: str) -> int | None:
        return self.family_caps.get(family, self.max_trajectories_per_family)


def _matches(patterns: Iterable[str], surface: str) -> str | None:
    for p in patterns:
        if fnmatch.fnmatchcase(surface, p):
            return p
    return None


def build_dataset(
    trajectories: Sequence[Trajectory],
    balance: BalanceConfig | None = None,
    catalog: Catalog | None = None,
    window: int = WINDOW,
) -> list[ImitationExample]:
    """One example per (context, next oracle action) pair, after balancing.

    Trajectories are kept in the given order. When a family exceeds its cap
    a seeded sample of its trajectories is kept; down-sampling draws one
    number per matching example from the same seeded stream, in order, so
    the retained subset is reproducible.
    """
    if not trajectories:
        raise DatasetError("cannot build a dataset from zero trajectories")
    balance = balance or BalanceConfig()
    rng = random.Random(balance.seed)

    by_family: dict[str, list[int]] = {}
    for i, tr in enumerate(trajectories):
        by_family.setdefault(tr.family, []).append(i)
    keep: set[int] = set()
    for family, idx in by_family.items():
        cap = balance.cap_for(family)
        if cap is not None and len(idx) > cap:
            idx = sorted(rng.sample(idx, cap))
        keep.update(idx)

    examples: list[ImitationExample] = []
    for i, tr in enumerate(trajectories):
        if i not in keep:
            continue
        history = tr.transitions
        for step in range(1, len(history)):
            target = history[step].action.surface
            if catalog is not None:
                catalog.parse_surface(target)
            pattern = _matches(balance.downsample, target)
            if pattern is not None and rng.random() >= balance.downsample[pattern]:
                continue
            wpat = _matches(balance.downweight, target)
            ctx = SwiftContext.from_history(tr.task_description, history[:step], window)
            examples.append(
                ImitationExample(
                    id=len(examples),
                    context_text=serialize_context(ctx),
                    target=target,
                    task_family=tr.family,
                    variation_id=tr.variation_id,
                    step=step,
                    weight=balance.downweight[wpat] if wpat else 1.0,
                )
            )
    return examples


def save_examples(examples: Iterable[ImitationExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"schema": DATASET_SCHEMA, **asdict(ex)}, sort_keys=True) + "\n")


def load_examples(path: str | Path) -> list[ImitationExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if row.pop("schema", None) != DATASET_SCHEMA:
                raise DatasetError(f"{path}:{n}: expected schema {DATASET_SCHEMA}")
            out.append(ImitationExample(**row))
    return out
