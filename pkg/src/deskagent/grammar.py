"""Action templates and the two action notations.

Every action has a *surface* form (``pour red paint into wood cup``), which
is what the world engine accepts, and a *formal* form
(``POUR(red paint, wood cup)``), which is what the grounding prompt asks a
language model to emit. A :class:`Catalog` holds the template definitions
and converts between the two.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

_SLOT = re.compile(r"\{(\d+)\}")
_WS = re.compile(r"\s+")
_FORMAL = re.compile(r"^([A-Za-z_]+)\s*\((.*)\)$", re.DOTALL)


class GrammarError(ValueError):
    """Raised for unknown templates, wrong arity or unparseable commands."""


def normalize(text: str) -> str:
    return _WS.sub(" ", text.strip().lower())


@dataclass(frozen=True)
class TemplateDef:
    """One action template.

    ``pattern`` is the surface pattern with ``{0}``, ``{1}`` argument slots,
    e.g. ``"move {0} to {1}"``. ``id`` doubles as the formal call name.
    """

    id: str
    arity: int
    pattern: str
    remark: str = ""
    example: str = ""

    def __post_init__(self) -> None:
        slots = sorted(int(s) for s in _SLOT.findall(self.pattern))
        if slots != list(range(self.arity)):
            raise GrammarError(
                f"template {self.id}: pattern {self.pattern!r} must have exactly "
                f"{self.arity} argument slot(s) numbered from 0"
            )
        if self.id != self.id.upper() or not self.id.replace("_", "").isalpha():
            raise GrammarError(f"template id {self.id!r} must be an uppercase word")

    @property
    def literal_words(self) -> tuple[str, ...]:
        return tuple(w for w in _SLOT.sub(" ", self.pattern).split() if w)

    def signature(self) -> str:
        names = ("X", "Y", "Z")
        return f"{self.id}({', '.join(names[: self.arity])})"


@dataclass(frozen=True)
class Action:
    """A template id plus ordered arguments.

    ``surface`` is filled in by :meth:`Catalog.make`; two actions compare
    equal iff their template and arguments match.
    """

    template_id: str
    args: tuple[str, ...] = ()
    surface: str = field(default="", compare=False)

    def __str__(self) -> str:
        return self.surface or f"{self.template_id}{self.args}"


class Catalog:
    """An ordered, immutable set of :class:`TemplateDef`."""

    def __init__(self, templates: Iterable[TemplateDef]):
        self._templates: dict[str, TemplateDef] = {}
        for t in templates:
            if t.id in self._templates:
                raise GrammarError(f"duplicate template id {t.id!r}")
            self._templates[t.id] = t
        self._regexes = {tid: self._compile(t) for tid, t in self._templates.items()}
        connectors: set[str] = set()
        for t in self._templates.values():
            if t.arity > 1:
                between = _SLOT.split(t.pattern)
                # literals strictly between two slots can make a split ambiguous
                for i, chunk in enumerate(between):
                    if 0 < i < len(between) - 1 and i % 2 == 0:
                        connectors.update(chunk.split())
        self.reserved_words = frozenset(connectors)

    @staticmethod
    def _compile(t: TemplateDef) -> re.Pattern[str]:
        parts = []
        for i, chunk in enumerate(_SLOT.split(normalize(t.pattern))):
            parts.append("(.+)" if i % 2 else re.escape(chunk))
        return re.compile("".join(parts))

    def __iter__(self):
        return iter(self._templates.values())

    def __len__(self) -> int:
        return len(self._templates)

    def __contains__(self, template_id: object) -> bool:
        return template_id in self._templates

    def __getitem__(self, template_id: str) -> TemplateDef:
        try:
            return self._templates[template_id]
        except KeyError:
            raise GrammarError(f"unknown template {template_id!r}") from None

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._templates)

    def make(self, template_id: str, args: Sequence[str] = ()) -> Action:
        t = self[template_id.upper()]
        args = tuple(normalize(a) for a in args)
        if len(args) != t.arity:
            raise GrammarError(
                f"{t.id} takes {t.arity} argument(s), got {len(args)}: {args!r}"
            )
        if any(not a for a in args):
            raise GrammarError(f"{t.id}: empty argument in {args!r}")
        return Action(t.id, args, t.pattern.format(*args))

    def parse_surface(self, text: str) -> Action:
        text = normalize(text)
        best: tuple[int, str, tuple[str, ...]] | None = None
        for tid, rx in self._regexes.items():
            m = rx.fullmatch(text)
            if m is None:
                continue
            args = tuple(normalize(g) for g in m.groups())
            if any(not a for a in args):
                continue
            # prefer the template with more literal text ("look around" over "look at X")
            rank = len(self._templates[tid].literal_words)
            if best is None or rank > best[0]:
                best = (rank, tid, args)
        if best is None:
            raise GrammarError(f"no template matches {text!r}")
        return self.make(best[1], best[2])

    def parse_formal(self, call: str) -> Action:
        m = _FORMAL.match(call.strip())
        if m is None:
            raise GrammarError(f"not a formal call: {call!r}")
        name, inner = m.group(1).upper(), m.group(2).strip()
        args = [a for a in (s.strip() for s in inner.split(","))] if inner else []
        return self.make(name, args)

    def to_formal(self, action: Action) -> str:
        t = self[action.template_id]
        if len(action.args) != t.arity:
            raise GrammarError(f"{t.id} takes {t.arity} argument(s)")
        return f"{t.id}({', '.join(action.args)})"

    def formal_to_surface(self, call: str) -> str:
        return self.parse_formal(call).surface

    def surface_to_formal(self, text: str) -> str:
        return self.to_formal(self.parse_surface(text))

    def check_name(self, name: str) -> None:
        """Reject names that would make a surface string ambiguous."""
        if not re.fullmatch(r"[a-z0-9]+( [a-z0-9]+)*", name):
            raise GrammarError(f"name {name!r} must be lowercase words separated by spaces")
        clash = self.reserved_words.intersection(name.split())
        if clash:
            raise GrammarError(f"name {name!r} contains reserved word(s) {sorted(clash)}")

    def describe(self) -> str:
        lines = []
        for t in self:
            line = f"{t.signature()} : {t.remark}" if t.remark else t.signature()
            if t.example:
                line += f" e.g., {t.example}"
            lines.append(line)
        return "\n".join(lines)
