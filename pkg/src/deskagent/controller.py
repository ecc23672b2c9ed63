"""The fast/slow integration loop.

An episode starts in Swift mode: the fast policy proposes an action, the
switch conditions are checked, and either the action runs or the Sage
planner is invoked to produce a buffer of actions that runs to completion
(or until two consecutive faults), after which control returns to Swift.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from .fast import FastPolicy, PredictionError, SwiftContext, serialize_context
from .grammar import Action
from .llm import LLMCall, LLMClient, TransportError
from .oracle import Trajectory, solve
from .planner import (
    ActionBuffer,
    PlannerConfig,
    PlanningParseError,
    build_memory_augmentation,
    grounding_key,
    parse_grounding_output,
    run_sage,
    summarize_history,
)
from .world import Engine, EnvState, TaskVariation, Transition, WorldSpec
from .world.text import DEFAULT_EXCEPTION_PHRASES, parse_object_names
from .world.text import detect_exception as _phrase_match

log = logging.getLogger(__name__)


class Condition(str, enum.Enum):
    CRITICAL = "critical"
    INVALID = "invalid"
    UNEXPECTED = "unexpected"
    STUCK = "stuck"


class Mode(str, enum.Enum):
    INIT = "init"
    SWIFT = "swift"
    SAGE = "sage"
    LLM = "llm"
    ORACLE = "oracle"


class Outcome(str, enum.Enum):
    DRAINED = "drained"
    HALTED = "halted-double-fault"
    TERMINAL = "milestone-terminal"


@dataclass(frozen=True)
class SwitchConfig:
    stuck_window: int = 5
    exception_phrases: tuple[str, ...] = DEFAULT_EXCEPTION_PHRASES
    critical_templates: frozenset[str] = frozenset({"FOCUS"})
    max_steps: int = 60
    max_sage_calls: int = 10
    sage_enabled: bool = True
    planner: PlannerConfig = PlannerConfig()

    def __post_init__(self) -> None:
        if self.stuck_window < 1:
            raise ValueError("stuck_window must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_sage_calls < 0:
            raise ValueError("max_sage_calls must be >= 0")


def detect_exception(observation: str, config: SwitchConfig = SwitchConfig()) -> bool:
    return _phrase_match(observation, config.exception_phrases)


def check_switch(
    recent_rewards: Sequence[int],
    predicted_action: Action | None,
    validity: bool | None,
    last_observation: str | None,
    config: SwitchConfig = SwitchConfig(),
) -> Condition | None:
    """First firing condition in priority order Critical > Invalid > Unexpected > Stuck.

    Pass ``None`` for inputs that are not available at the call site: the
    pre-execution check has no observation yet, the post-execution check
    has no pending prediction.
    """
    if predicted_action is not None and predicted_action.template_id in config.critical_templates:
        return Condition.CRITICAL
    if validity is False:
        return Condition.INVALID
    if last_observation is not None and detect_exception(last_observation, config):
        return Condition.UNEXPECTED
    k = config.stuck_window
    if len(recent_rewards) >= k and all(r == 0 for r in recent_rewards[-k:]):
        return Condition.STUCK
    return None


def _is_fault(tr: Transition, config: SwitchConfig) -> bool:
    return (not tr.valid) or detect_exception(tr.observation, config)


def execute_buffer(
    engine: Engine,
    state: EnvState,
    buffer: ActionBuffer | Sequence[Action],
    config: SwitchConfig = SwitchConfig(),
    budget: int | None = None,
) -> tuple[EnvState, list[Transition], Outcome]:
    """Run buffered actions in order.

    Stops after two consecutive invalid/exception transitions, when the
    episode ends, or when ``budget`` steps have been used.
    """
    actions = list(buffer)
    if not actions:
        raise ValueError("execute_buffer needs a nonempty buffer")
    transitions: list[Transition] = []
    streak = 0
    for action in actions:
        if budget is not None and len(transitions) >= budget:
            break
        state, tr = engine.step(state, action)
        transitions.append(tr)
        if tr.terminal or tr.score >= 100:
            return state, transitions, Outcome.TERMINAL
        streak = streak + 1 if _is_fault(tr, config) else 0
        if streak >= 2:
            return state, transitions, Outcome.HALTED
    return state, transitions, Outcome.DRAINED


@dataclass
class EpisodeResult:
    variation_id: str
    family: str
    strategy: str
    trajectory: list[Transition]
    mode_log: list[tuple[str, str | None]]
    llm_calls: list[LLMCall] = field(default_factory=list)
    llm_log: list[tuple[str, str, str]] = field(default_factory=list)
    events: list[dict[str, Any]] = field(default_factory=list)
    terminated_reason: str = ""

    @property
    def final_score(self) -> int:
        return self.trajectory[-1].score

    @property
    def last_nonnegative_score(self) -> int:
        for tr in reversed(self.trajectory):
            if tr.score >= 0:
                return tr.score
        return 0

    @property
    def num_actions(self) -> int:
        return len(self.trajectory) - 1

    @property
    def total_tokens(self) -> int:
        return sum(c.total_tokens for c in self.llm_calls)

    @property
    def sage_invocations(self) -> list[dict[str, Any]]:
        return [e for e in self.events if e["event"] == "sage"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "variation_id": self.variation_id,
            "family": self.family,
            "strategy": self.strategy,
            "terminated_reason": self.terminated_reason,
            "final_score": self.final_score,
            "last_nonnegative_score": self.last_nonnegative_score,
            "trajectory": [t.to_dict() for t in self.trajectory],
            "mode_log": [list(m) for m in self.mode_log],
            "llm_calls": [[c.stage, c.prompt_tokens, c.completion_tokens] for c in self.llm_calls],
            "events": self.events,
        }


class _Episode:
    """Mutable bookkeeping for one run; keeps run_episode readable."""

    def __init__(self, world: WorldSpec, variation: TaskVariation, config: SwitchConfig, strategy: str):
        self.world = world
        self.variation = variation
        self.config = config
        self.engine = Engine(world, variation)
        self.state, first = self.engine.reset()
        self.result = EpisodeResult(variation.id, variation.family, strategy, [first], [(Mode.INIT.value, None)])
        self.window: list[int] = []
        self.fallback = 0  # Swift-only steps left after a failed planning round

    @property
    def steps(self) -> int:
        return len(self.result.trajectory) - 1

    def record(self, tr: Transition, mode: Mode, cond: Condition | None) -> None:
        self.result.trajectory.append(tr)
        self.result.mode_log.append((mode.value, cond.value if cond else None))
        self.window.append(tr.reward)

    def step(self, action: Action, mode: Mode, cond: Condition | None = None) -> Transition:
        self.state, tr = self.engine.step(self.state, action)
        self.record(tr, mode, cond)
        return tr

    def event(self, kind: str, **data: Any) -> None:
        self.result.events.append({"event": kind, "t": self.steps, **data})

    def finished(self) -> str | None:
        last = self.result.trajectory[-1]
        if last.score >= 100:
            return "completed"
        if last.terminal:
            return "violation"
        if self.steps >= self.config.max_steps:
            return "max-steps"
        return None


def _swift_context(ep: _Episode) -> str:
    return serialize_context(SwiftContext.from_history(ep.variation.task_description, ep.result.trajectory))


def _predict(policy: FastPolicy, ep: _Episode) -> Action | None:
    try:
        return policy.predict_action(_swift_context(ep))
    except PredictionError as exc:
        ep.event("prediction-error", detail=str(exc))
        return None


def _invoke_sage(ep: _Episode, llm: LLMClient, cond: Condition, sage_calls: int) -> str | None:
    """One Sage round: plan, ground, execute. Returns a termination reason or None."""
    cfg = ep.config
    if sage_calls >= cfg.max_sage_calls:
        return "max-sage-calls"
    try:
        outcome = run_sage(llm, ep.variation.task_description, ep.result.trajectory, ep.world.catalog, cfg.planner)
    except PlanningParseError as exc:
        ep.event("sage", condition=cond.value, outcome="planning-parse-failure", detail=str(exc))
        ep.fallback = cfg.stuck_window
        ep.window = []
        return None
    except TransportError as exc:
        ep.event("sage", condition=cond.value, outcome="llm-failure", detail=str(exc))
        return "llm-failure"
    buffer = outcome.buffer
    if not buffer.actions:
        # nothing usable came back: spend one observation step and revert
        ep.step(ep.world.catalog.make("LOOK"), Mode.SAGE, cond)
        ep.event("sage", condition=cond.value, outcome="empty-buffer", buffer=[], skipped=list(buffer.skipped))
        ep.window = []
        return None
    budget = cfg.max_steps - ep.steps
    ep.state, transitions, result = execute_buffer(ep.engine, ep.state, buffer, cfg, budget)
    for tr in transitions:
        ep.record(tr, Mode.SAGE, cond)
    ep.event(
        "sage",
        condition=cond.value,
        outcome=result.value,
        buffer=[a.surface for a in buffer],
        executed=len(transitions),
        skipped=list(buffer.skipped),
        planning_attempts=outcome.planning_attempts,
    )
    ep.window = []
    return None


def run_episode(
    world: WorldSpec,
    variation: TaskVariation,
    fast_policy: FastPolicy,
    llm: LLMClient | None,
    config: SwitchConfig = SwitchConfig(),
) -> EpisodeResult:
    """Run one episode of the fast/slow agent (Swift-only if Sage is disabled)."""
    if config.sage_enabled and llm is None:
        raise ValueError("an LLM client is required when Sage is enabled")
    strategy = "swiftsage" if config.sage_enabled else "swift-only"
    ep = _Episode(world, variation, config, strategy)
    sage_calls = 0
    reason = ep.finished()
    while reason is None:
        predicted = _predict(fast_policy, ep)
        if not config.sage_enabled:
            action = predicted or world.catalog.make("LOOK")
            ep.step(action, Mode.SWIFT)
            reason = ep.finished()
            continue

        valid = predicted is not None and ep.engine.is_valid(ep.state, predicted)
        window = [] if ep.fallback else ep.window
        cond = check_switch(window, predicted, valid, None, config)
        if cond is None:
            assert predicted is not None
            tr = ep.step(predicted, Mode.SWIFT)
            if ep.fallback:
                ep.fallback -= 1
                if ep.fallback == 0:
                    ep.window = []
            reason = ep.finished()
            if reason is not None:
                break
            if not ep.fallback:
                cond = check_switch(ep.window, None, True, tr.observation, config)
        if cond is not None:
            ep.event("switch", condition=cond.value, predicted=predicted.surface if predicted else None)
            reason = _invoke_sage(ep, llm, cond, sage_calls)
            sage_calls += 1
            if reason is None:
                reason = ep.finished()
    ep.result.terminated_reason = reason
    if llm is not None:
        ep.result.llm_calls = list(llm.calls)
        ep.result.llm_log = list(llm.log)
    return ep.result


# -- baselines -------------------------------------------------------------------

BASELINE_MARKER = "Next action:"


def build_step_prompt(task: str, trajectory: Sequence[Transition], catalog, config: PlannerConfig = PlannerConfig()) -> str:
    """Prompt for the one-call-per-action baseline (full history each step)."""
    last = trajectory[-1]
    parts = [
        "You are an agent acting in a text-based world, one action at a time.",
        f"Task: {' '.join(task.split())}",
        "Available action types:",
        catalog.describe(),
        "Action history so far:",
        summarize_history(trajectory, config.obs_budget, config.exception_phrases) or "(no actions yet)",
        f"Current environment: {last.env_text}",
        f"Current inventory: {last.inventory_text}",
        "Objects seen in other rooms:",
        build_memory_augmentation(trajectory) or "(none)",
        grounding_key(trajectory),
        "Think about which subgoal comes next, then give exactly one formal call.",
        BASELINE_MARKER,
    ]
    return "\n".join(parts)


def run_llm_every_step(
    world: WorldSpec, variation: TaskVariation, llm: LLMClient, config: SwitchConfig = SwitchConfig()
) -> EpisodeResult:
    """Baseline: one LLM call chooses every action."""
    ep = _Episode(world, variation, config, "llm-every-step")
    reason = ep.finished()
    while reason is None:
        prompt = build_step_prompt(variation.task_description, ep.result.trajectory, world.catalog, config.planner)
        try:
            resp = llm.complete(prompt, "action")
        except TransportError as exc:
            ep.event("llm-failure", detail=str(exc))
            reason = "llm-failure"
            break
        last = ep.result.trajectory[-1]
        visible = parse_object_names(last.env_text) + parse_object_names(last.inventory_text)
        buffer = parse_grounding_output(resp.text, world.catalog, visible)
        if buffer.actions:
            action = buffer.actions[0]
        else:
            ep.event("unparseable-action", text=resp.text[:200])
            action = Action("INVALID", (), resp.text.strip().splitlines()[0][:80] if resp.text.strip() else "")
        ep.step(action, Mode.LLM)
        reason = ep.finished()
    ep.result.terminated_reason = reason
    ep.result.llm_calls = list(llm.calls)
    ep.result.llm_log = list(llm.log)
    return ep.result


def run_oracle(world: WorldSpec, variation: TaskVariation) -> EpisodeResult:
    traj: Trajectory = solve(world, variation)
    modes = [(Mode.INIT.value, None)] + [(Mode.ORACLE.value, None)] * len(traj)
    return EpisodeResult(
        variation.id, variation.family, "oracle", list(traj.transitions), modes, terminated_reason="completed"
    )


__all__ = [
    "Condition", "Mode", "Outcome", "SwitchConfig", "EpisodeResult",
    "check_switch", "detect_exception", "execute_buffer",
    "run_episode", "run_llm_every_step", "run_oracle", "build_step_prompt", "BASELINE_MARKER",
]
