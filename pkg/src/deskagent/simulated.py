"""A simulated LLM that answers prompts with oracle knowledge.

:class:`OracleLLM` sees only the prompt text, like a real model. It finds
the variation from the task line, rebuilds the episode state by replaying
the action history written in the prompt, and answers with the oracle
script replanned from that state. Its answers can be frozen into a static
:class:`~deskagent.llm.StubScript` with :class:`RecordingBackend`, which
is how the bundled benchmark stub is produced.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from .controller import BASELINE_MARKER
from .grammar import Action, GrammarError
from .llm import CompletionRequest, CompletionResponse, LLMError, StubRule, StubScript, count_tokens
from .oracle import SolverError, SubgoalPlan, plan_from
from .planner import GROUNDING_MARKER, PLANNING_MARKER
from .world import Engine, EnvState, TaskVariation, Transition, WorldSpec
from .world.text import detect_exception

_LINE_RX = re.compile(r"^(?P<action>.+?) \[location: [^\]]+\](?: ×(?P<n>\d+))? → (?P<obs>.*)$")


class SimulationError(LLMError):
    pass


def _section(prompt: str, header: str, end: str) -> list[str]:
    lines = prompt.splitlines()
    try:
        i = lines.index(header)
    except ValueError:
        return []
    out = []
    for line in lines[i + 1:]:
        if line.startswith(end):
            break
        out.append(line)
    return out


def _field(prompt: str, prefix: str) -> str | None:
    for line in prompt.splitlines():
        if line.startswith(prefix):
            return line[len(prefix):]
    return None


@dataclass
class _Replay:
    variation: TaskVariation
    engine: Engine
    state: EnvState
    last: Transition


class OracleLLM:
    """Backend answering planning, grounding and per-step prompts.

    Grounding prompts carry only recent history, so the plan from the
    preceding planning call is kept on the instance; use :meth:`fork` to
    get one instance per episode.
    """

    def __init__(self, world: WorldSpec, variations: Sequence[TaskVariation]):
        self.world = world
        self.variations = list(variations)
        self._by_task: dict[str, list[TaskVariation]] = {}
        for v in self.variations:
            self._by_task.setdefault(" ".join(v.task_description.split()), []).append(v)
        self._pending: list[str] | None = None

    def fork(self) -> "OracleLLM":
        return OracleLLM(self.world, self.variations)

    # -- state reconstruction ---------------------------------------------------

    def _history(self, prompt: str) -> list[tuple[str, int, str]]:
        out = []
        for line in _section(prompt, "Action history so far:", "Current environment:"):
            if line == "(no actions yet)":
                continue
            m = _LINE_RX.match(line)
            if m is None:
                raise SimulationError(f"cannot read history line {line!r}")
            out.append((m.group("action"), int(m.group("n") or 1), m.group("obs")))
        return out

    def _action(self, surface: str) -> Action:
        try:
            return self.world.catalog.parse_surface(surface)
        except GrammarError:
            return Action("INVALID", (), surface)

    def _replay(self, prompt: str) -> _Replay:
        task = _field(prompt, "Task: ")
        candidates = self._by_task.get(task or "", [])
        if not candidates:
            raise SimulationError(f"no known variation has task {task!r}")
        history = self._history(prompt)
        env_text = _field(prompt, "Current environment: ")
        for v in candidates:
            engine = Engine(self.world, v)
            state, last = engine.reset()
            consistent = True
            for surface, repeat, obs in history:
                for _ in range(repeat):
                    state, last = engine.step(state, self._action(surface))
                if not last.observation.startswith(obs.rstrip("…").rstrip()):
                    consistent = False
                    break
            if consistent and (env_text is None or env_text == last.env_text):
                return _Replay(v, engine, state, last)
        raise SimulationError(f"history in prompt matches none of {[v.id for v in candidates]}")

    # -- answers -------------------------------------------------------------------

    def _plan(self, r: _Replay) -> list[SubgoalPlan]:
        try:
            return plan_from(r.engine, r.variation, r.state)
        except SolverError as exc:
            raise SimulationError(f"oracle cannot finish from this state: {exc}") from exc

    def _objects(self, r: _Replay, plans: list[SubgoalPlan]) -> list[str]:
        names: list[str] = []
        for p in plans:
            for cmd in p.commands:
                for arg in self.world.catalog.parse_surface(cmd).args:
                    if self.world.is_object(arg) and arg not in names:
                        names.append(arg)
        return names

    def _planning_answer(self, r: _Replay) -> str:
        plans = self._plan(r)
        todo = [p for p in plans if not p.done]
        held = set(r.engine.held(r.state))
        objects = self._objects(r, todo)
        where = {o: ("inventory" if o in held else r.engine.room_of(r.state, o)) for o in objects}
        current = todo[0] if todo else None
        self._pending = list(current.commands) if current else []
        lines = ["Answer 1:"]
        lines += [f"- {o}: {where[o]}" for o in objects] or ["none"]
        lines.append("Answer 2:")
        lines += [f"- {o}" for o in objects if o not in held] or ["none"]
        lines.append("Answer 3:")
        lines += [f"{i}. {p.name}" for i, p in enumerate(plans, 1)]
        lines.append("Answer 4:")
        done = [p.name for p in plans if p.done]
        lines.append(f"Completed: {'; '.join(done) if done else 'none'}")
        lines.append(f"Current: {current.name if current else 'none'}")
        lines.append("Answer 5:")
        if (not r.last.valid or detect_exception(r.last.observation)) and current:
            lines.append(
                f"The last action '{r.last.action.surface}' did not work ({r.last.observation}). "
                f"Instead: {current.commands[0]}."
            )
        else:
            lines.append("none")
        return "\n".join(lines)

    def _grounding_answer(self) -> str:
        if self._pending is None:
            raise SimulationError("grounding prompt arrived without a preceding planning prompt")
        cmds, self._pending = self._pending, None
        return "\n".join(self.world.catalog.surface_to_formal(c) for c in cmds)

    def _step_answer(self, r: _Replay) -> str:
        todo = [p for p in self._plan(r) if not p.done]
        if not todo:
            return "Thought: the task looks finished.\nLOOK()"
        return f"Thought: next I should {todo[0].name}.\n{self.world.catalog.surface_to_formal(todo[0].commands[0])}"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        prompt = request.prompt
        if prompt.rstrip().endswith(GROUNDING_MARKER):
            text = self._grounding_answer()
        elif PLANNING_MARKER in prompt:
            text = self._planning_answer(self._replay(prompt))
        elif prompt.rstrip().endswith(BASELINE_MARKER):
            text = self._step_answer(self._replay(prompt))
        else:
            raise SimulationError(f"unrecognized prompt: {' '.join(prompt[:120].split())!r}")
        return CompletionResponse(text, count_tokens(prompt), count_tokens(text))


@dataclass
class RecordingBackend:
    """Pass-through backend that remembers every (prompt, completion) pair."""

    inner: object
    records: list[tuple[str, str]] = field(default_factory=list)

    def fork(self) -> "RecordingBackend":
        inner = self.inner.fork() if hasattr(self.inner, "fork") else self.inner
        return RecordingBackend(inner, self.records)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        resp = self.inner.complete(request)
        self.records.append((request.prompt, resp.text))
        return resp

    def script(self) -> StubScript:
        """Exact-prompt rules, first occurrence wins."""
        seen: dict[str, str] = {}
        for prompt, text in self.records:
            seen.setdefault(prompt, text)
        return StubScript(tuple(StubRule(text, (prompt,)) for prompt, text in seen.items()))
