"""Serialized context window fed to the fast policy."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from ..world import Transition

WINDOW = 10

_CONTEXT_RX = re.compile(
    r"^Task: (?P<task>.*?); Time: (?P<time>-?\d+); Score: (?P<score>-?\d+); "
    r"Action history: (?P<history>.*?); Current room: (?P<room>.*?); "
    r"Inventory: (?P<inventory>.*?); Visited rooms: \{(?P<visited>[^}]*)\}$",
    re.DOTALL,
)
_TRIPLE_RX = re.compile(r"\[(?P<action>[^\[\]]*?) \((?P<reward>[+-]\d+)\) → (?P<obs>[^\[\]]*)\]")


def _flat(text: str) -> str:
    return " ".join(text.split())


def _signed(reward: int) -> str:
    return f"+{reward}" if reward >= 0 else str(reward)


@dataclass(frozen=True)
class SwiftContext:
    task_description: str
    time: int
    score: int
    window: tuple[tuple[str, int, str], ...]
    current_room_text: str
    inventory_text: str
    visited_rooms: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.window) > WINDOW:
            raise ValueError(f"window holds at most {WINDOW} steps, got {len(self.window)}")
        if len(set(self.visited_rooms)) != len(self.visited_rooms):
            raise ValueError("visited_rooms must not repeat")

    @classmethod
    def from_history(cls, task_description: str, history: Sequence[Transition], window: int = WINDOW) -> "SwiftContext":
        """Context for predicting the action after ``history[-1]``."""
        if not history:
            raise ValueError("history must contain at least the initial look around")
        last = history[-1]
        visited: list[str] = []
        for tr in history:
            if tr.location not in visited:
                visited.append(tr.location)
        recent = history[-window:]
        return cls(
            task_description=task_description,
            time=len(history) - 1,
            score=last.score,
            window=tuple((t.action.surface, t.reward, t.observation) for t in recent),
            current_room_text=last.env_text,
            inventory_text=last.inventory_text,
            visited_rooms=tuple(visited),
        )


def serialize_context(ctx: SwiftContext) -> str:
    """Render the context as one line, oldest window step first."""
    history = " ".join(
        f"[{_flat(a)} ({_signed(r)}) → {_flat(o)}]" for a, r, o in ctx.window
    )
    return (
        f"Task: {_flat(ctx.task_description)}; Time: {ctx.time}; Score: {ctx.score}; "
        f"Action history: {history}; Current room: {_flat(ctx.current_room_text)}; "
        f"Inventory: {_flat(ctx.inventory_text)}; Visited rooms: {{{', '.join(ctx.visited_rooms)}}}"
    )


def parse_context(text: str) -> SwiftContext:
    m = _CONTEXT_RX.match(text)
    if m is None:
        raise ValueError(f"not a serialized context: {text[:80]!r}")
    window = tuple(
        (t.group("action"), int(t.group("reward")), t.group("obs"))
        for t in _TRIPLE_RX.finditer(m.group("history"))
    )
    visited = tuple(r.strip() for r in m.group("visited").split(",") if r.strip())
    return SwiftContext(
        task_description=m.group("task"),
        time=int(m.group("time")),
        score=int(m.group("score")),
        window=window,
        current_room_text=m.group("room"),
        inventory_text=m.group("inventory"),
        visited_rooms=visited,
    )
