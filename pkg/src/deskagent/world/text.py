"""Fixed phrasing shared by the engine and the agents that read its output.

The controller detects exceptions by substring, and the planner rebuilds
object lists from rendered rooms, so the wording here is part of the
contract and must not drift.
"""
from __future__ import annotations

import re
from typing import Iterable

NO_MATCH = "No known action can match that input."
EPISODE_OVER = "The task is over. No known action can match that input."

DEFAULT_EXCEPTION_PHRASES = ("no known action can match", "cannot", "doesn't")

_ROOM_RX = re.compile(r"^This room is called the (?P<room>[a-z0-9 ]+)\.")
_SEE_RX = re.compile(r"you see: (?P<items>.*?)\.(?: You can go to: (?P<exits>[a-z0-9 ,]+)\.)?$")
_ARTICLE_RX = re.compile(r"^(a|an) ")


def article(name: str) -> str:
    return "an" if name[:1] in "aeiou" else "a"


def item_phrase(name: str, details: Iterable[str]) -> str:
    details = list(details)
    suffix = f" ({', '.join(details)})" if details else ""
    return f"{article(name)} {name}{suffix}"


def detect_exception(observation: str, phrases: Iterable[str] = DEFAULT_EXCEPTION_PHRASES) -> bool:
    low = observation.lower()
    return any(p.lower() in low for p in phrases)


def parse_object_names(text: str) -> list[str]:
    """Object names listed by a room or inventory rendering, in order."""
    m = _SEE_RX.search(text)
    if m is None:
        return []
    items = m.group("items")
    if items == "nothing":
        return []
    names = []
    for item in items.split("; "):
        item = _ARTICLE_RX.sub("", item.split(" (", 1)[0].strip())
        if item:
            names.append(item)
    return names


def parse_room_name(text: str) -> str | None:
    m = _ROOM_RX.match(text)
    return m.group("room") if m else None


def parse_exits(text: str) -> list[str]:
    m = _SEE_RX.search(text)
    if m is None or not m.group("exits"):
        return []
    return [r.strip() for r in m.group("exits").split(",") if r.strip()]
