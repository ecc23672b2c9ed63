"""Slow-thinking planner: a planning prompt answered in one call, then a
grounding prompt that turns the plan into a buffer of formal actions.

Prompts are pure functions of their inputs, so a scripted stub can match
them byte-for-byte across runs.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from .grammar import Action, Catalog, GrammarError
from .llm import LLMClient
from .world import Transition
from .world.text import DEFAULT_EXCEPTION_PHRASES, detect_exception, parse_object_names

log = logging.getLogger(__name__)

QUESTIONS = (
    "To complete the task, which objects do I need to collect? Please list them and their possible locations one by one.",
    "Are there any objects that have not been collected yet?",
    "To complete the task most efficiently, what are the important subgoals to achieve? Please list the subgoals one by one.",
    "Considering these subgoals, what have I already completed? And which subgoal should I focus on right now?",
    "Have I made any mistakes that might prevent me from efficiently completing the next subgoal? If any, how should I fix them?",
)

PLANNING_MARKER = "Answer the five questions below about the task."
GROUNDING_MARKER = "Grounded actions:"
FORMAT_REMINDER = (
    "Reminder: follow the answer format exactly. Start each answer on its own line "
    "with its header, and make sure Answer 4 has a \"Current:\" line."
)
OBS_BUDGET = 120
HISTORY_WINDOW = 10

_ANSWER_RX = re.compile(r"^\s*Answer\s*([1-5])\s*:\s*(.*)$", re.MULTILINE | re.IGNORECASE)
_BULLET_RX = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_FORMAL_RX = re.compile(r"^([A-Za-z_]+)\s*\((.*)\)\s*[.;,]?$")
_NONE = {"none", "no", "nothing", "n/a", "none.", "no."}


class PlanningParseError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    q4q5_only: bool = False
    obs_budget: int = OBS_BUDGET
    history_window: int = HISTORY_WINDOW
    extra_hints: str = ""
    exception_phrases: tuple[str, ...] = DEFAULT_EXCEPTION_PHRASES


@dataclass(frozen=True)
class PlanningPrompt:
    task_summary: str
    condensed_history: str
    current_env_text: str
    inventory_text: str
    memory_augmentation: str
    extra_hints: str = ""
    questions: tuple[str, ...] = QUESTIONS

    @property
    def text(self) -> str:
        parts = [
            "You are planning for an agent in a text-based world.",
            f"Task: {self.task_summary}",
            "Action history so far:",
            self.condensed_history or "(no actions yet)",
            f"Current environment: {self.current_env_text}",
            f"Current inventory: {self.inventory_text}",
            "Objects seen in other rooms:",
            self.memory_augmentation or "(none)",
        ]
        if self.extra_hints:
            parts.append(f"Hints: {self.extra_hints}")
        parts.append(PLANNING_MARKER)
        parts += [f"Q{i}: {q}" for i, q in enumerate(self.questions, 1)]
        parts.append(
            'Write each answer under its own header, "Answer 1:" through "Answer 5:". '
            'Under Answer 1 put one "object: location" per line. '
            'Under Answer 4 write a "Completed:" line and a "Current:" line. '
            'Write "none" for an empty answer.'
        )
        return "\n".join(parts)


@dataclass(frozen=True)
class PlanAnswers:
    q1_objects: tuple[tuple[str, str], ...]
    q2_missing: tuple[str, ...]
    q3_subgoals: tuple[str, ...]
    q4_completed: tuple[str, ...]
    q4_current: str
    q5_fixes: tuple[str, ...]

    def render(self, q4q5_only: bool = False) -> str:
        def items(xs: Sequence[str]) -> str:
            return "; ".join(xs) if xs else "none"

        lines = []
        if not q4q5_only:
            objs = [f"{o} ({loc})" if loc else o for o, loc in self.q1_objects]
            lines += [
                f"Objects needed: {items(objs)}",
                f"Objects not yet collected: {items(self.q2_missing)}",
                f"Subgoals: {items(self.q3_subgoals)}",
            ]
        lines += [
            f"Completed subgoals: {items(self.q4_completed)}",
            f"Current subgoal: {self.q4_current}",
            f"Fixes: {items(self.q5_fixes)}",
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class ActionBuffer:
    actions: tuple[Action, ...]
    origin: tuple[str, ...] = ()
    skipped: tuple[str, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)


# -- history views ----------------------------------------------------------------

def _truncate(text: str, budget: int) -> str:
    text = " ".join(text.split())
    return text if len(text) <= budget else text[: budget - 1].rstrip() + "…"


def summarize_history(
    trajectory: Sequence[Transition],
    obs_budget: int = OBS_BUDGET,
    exception_phrases: Sequence[str] = DEFAULT_EXCEPTION_PHRASES,
) -> str:
    """One line per agent action, tagged with the room it was issued in.

    The opening ``look around`` is not an agent action and is skipped.
    Consecutive repeats of the same failed action collapse to one line
    with a ``×N`` count.
    """
    lines: list[tuple[str, str, int, bool]] = []  # (key, tail, count, failed)
    for prev, tr in zip(trajectory, trajectory[1:]):
        failed = (not tr.valid) or detect_exception(tr.observation, exception_phrases)
        head = f"{tr.action.surface} [location: {prev.location}]"
        tail = _truncate(tr.observation, obs_budget)
        if failed and lines and lines[-1][3] and lines[-1][0] == head:
            key, _, count, _ = lines[-1]
            lines[-1] = (key, tail, count + 1, True)
        else:
            lines.append((head, tail, 1, failed))
    out = []
    for head, tail, count, _ in lines:
        mark = f" ×{count}" if count > 1 else ""
        out.append(f"{head}{mark} → {tail}")
    return "\n".join(out)


def build_memory_augmentation(trajectory: Sequence[Transition]) -> str:
    """Objects last seen in each previously visited room (not the current one)."""
    if not trajectory:
        return ""
    latest: dict[str, str] = {}
    for tr in trajectory:
        latest[tr.location] = tr.env_text  # dict keeps first-visit order
    here = trajectory[-1].location
    lines = []
    for room, text in latest.items():
        if room == here:
            continue
        names = parse_object_names(text)
        lines.append(f"{room}: {', '.join(names) if names else 'nothing'}")
    return "\n".join(lines)


def recent_actions(trajectory: Sequence[Transition], window: int = HISTORY_WINDOW, obs_budget: int = OBS_BUDGET) -> str:
    steps = list(trajectory[1:])[-window:]
    return "\n".join(f"- {t.action.surface} → {_truncate(t.observation, obs_budget)}" for t in steps)


# -- prompts ---------------------------------------------------------------------------

def build_planning_prompt(
    task: str, trajectory: Sequence[Transition], config: PlannerConfig = PlannerConfig()
) -> PlanningPrompt:
    if not trajectory:
        raise ValueError("trajectory must include the opening observation")
    last = trajectory[-1]
    return PlanningPrompt(
        task_summary=" ".join(task.split()),
        condensed_history=summarize_history(trajectory, config.obs_budget, config.exception_phrases),
        current_env_text=last.env_text,
        inventory_text=last.inventory_text,
        memory_augmentation=build_memory_augmentation(trajectory),
        extra_hints=config.extra_hints,
    )


def grounding_key(trajectory: Sequence[Transition]) -> str:
    """The line that pins a grounding prompt to a point in the episode."""
    last = trajectory[-1]
    return f"Last action: {last.action.surface} | Current score: {last.score}"


def build_grounding_prompt(
    task: str,
    plan: PlanAnswers,
    catalog: Catalog,
    trajectory: Sequence[Transition],
    config: PlannerConfig = PlannerConfig(),
) -> str:
    parts = [
        "You are choosing concrete actions for an agent in a text-based world.",
        f"Task: {' '.join(task.split())}",
        "Available action types:",
        catalog.describe(),
        "Plan:",
        plan.render(config.q4q5_only),
        f"Recent actions (last {config.history_window}):",
        recent_actions(trajectory, config.history_window, config.obs_budget) or "(none)",
        grounding_key(trajectory),
        "List the actions that complete the current subgoal only, one formal call per line, "
        "for example TELEPORT(kitchen). Use only the action types above.",
        GROUNDING_MARKER,
    ]
    return "\n".join(parts)


# -- parsing -----------------------------------------------------------------------

def _body_lines(body: str) -> list[str]:
    out = []
    for line in body.splitlines():
        line = _BULLET_RX.sub("", line).strip()
        if line and line.lower() not in _NONE:
            out.append(line)
    return out


def parse_planning_output(text: str) -> PlanAnswers:
    matches = list(_ANSWER_RX.finditer(text))
    sections: dict[int, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = (m.group(2) + "\n" + text[m.end():end]).strip()
        sections.setdefault(int(m.group(1)), body)
    if 4 not in sections:
        raise PlanningParseError("planning output has no Answer 4 section")

    objects = []
    for line in _body_lines(sections.get(1, "")):
        name, _, loc = line.partition(":")
        objects.append((name.strip(), loc.strip()))

    completed: list[str] = []
    current = ""
    loose: list[str] = []
    for line in _body_lines(sections[4]):
        label, sep, value = line.partition(":")
        label = label.strip().lower()
        if sep and label == "completed":
            completed += [c.strip() for c in value.split(";") if c.strip() and c.strip().lower() not in _NONE]
        elif sep and label == "current":
            current = value.strip()
        else:
            loose.append(line)
    if not current and loose:
        current = loose[-1]
    if not current:
        raise PlanningParseError("Answer 4 names no current subgoal")

    return PlanAnswers(
        q1_objects=tuple(objects),
        q2_missing=tuple(_body_lines(sections.get(2, ""))),
        q3_subgoals=tuple(_body_lines(sections.get(3, ""))),
        q4_completed=tuple(completed),
        q4_current=current,
        q5_fixes=tuple(_body_lines(sections.get(5, ""))),
    )


def parse_grounding_output(
    text: str,
    catalog: Catalog,
    visible_names: Sequence[str] = (),
    origin: Sequence[str] = (),
) -> ActionBuffer:
    """Keep lines that are well-formed calls to cataloged templates.

    Arguments are matched case-insensitively against ``visible_names``;
    unresolvable names are kept as written (the engine will reject them).
    """
    lookup = {n.lower(): n for n in visible_names}
    actions: list[Action] = []
    skipped: list[str] = []
    for raw in text.splitlines():
        line = _BULLET_RX.sub("", raw).strip().strip("`")
        if not line or line == GROUNDING_MARKER:
            continue
        m = _FORMAL_RX.match(line)
        if m is None:
            skipped.append(raw)
            continue
        name, inner = m.group(1).upper(), m.group(2).strip()
        args = [a.strip().strip("'\"") for a in inner.split(",")] if inner else []
        args = [lookup.get(" ".join(a.lower().split()), a) for a in args]
        try:
            actions.append(catalog.make(name, args))
        except (GrammarError, KeyError):
            skipped.append(raw)
    for line in skipped:
        log.info("grounding: skipped line %r", line)
    return ActionBuffer(tuple(actions), tuple(origin), tuple(skipped))


# -- one Sage invocation --------------------------------------------------------------

@dataclass(frozen=True)
class SageOutcome:
    buffer: ActionBuffer
    plan: PlanAnswers
    planning_attempts: int


def run_sage(
    llm: LLMClient,
    task: str,
    trajectory: Sequence[Transition],
    catalog: Catalog,
    config: PlannerConfig = PlannerConfig(),
) -> SageOutcome:
    """Plan, retrying once on a parse failure, then ground.

    Raises :class:`PlanningParseError` if both planning attempts fail; the
    caller decides how to fall back.
    """
    prompt = build_planning_prompt(task, trajectory, config).text
    origin = []
    plan = None
    for attempt in (1, 2):
        text = prompt if attempt == 1 else f"{prompt}\n{FORMAT_REMINDER}"
        resp = llm.complete(text, "planning")
        origin.append(f"planning#{len(llm.calls) - 1}")
        try:
            plan = parse_planning_output(resp.text)
            break
        except PlanningParseError as exc:
            log.warning("planning parse failed (attempt %d): %s", attempt, exc)
            if attempt == 2:
                raise
    assert plan is not None
    g_prompt = build_grounding_prompt(task, plan, catalog, trajectory, config)
    resp = llm.complete(g_prompt, "grounding")
    origin.append(f"grounding#{len(llm.calls) - 1}")
    last = trajectory[-1]
    visible = parse_object_names(last.env_text) + parse_object_names(last.inventory_text)
    buffer = parse_grounding_output(resp.text, catalog, visible, origin)
    return SageOutcome(buffer, plan, attempt)
