"""Deterministic text-world simulator with declarative worlds and tasks."""
from .engine import Engine, EnvState, ResetError, Transition
from .spec import (
    ExceptionSpec,
    Milestone,
    SpecError,
    TaskFamily,
    TaskVariation,
    WorldSpec,
    bundled_families,
    bundled_variations,
    bundled_world,
    load_task_family,
    load_world,
)

__all__ = [
    "Engine",
    "EnvState",
    "ExceptionSpec",
    "Milestone",
    "ResetError",
    "SpecError",
    "TaskFamily",
    "TaskVariation",
    "Transition",
    "WorldSpec",
    "bundled_families",
    "bundled_variations",
    "bundled_world",
    "load_task_family",
    "load_world",
]
