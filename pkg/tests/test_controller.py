from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from deskagent.controller import (
    BASELINE_MARKER,
    Condition,
    Outcome,
    SwitchConfig,
    build_step_prompt,
    check_switch,
    execute_buffer,
    run_episode,
    run_llm_every_step,
    run_oracle,
)
from deskagent.fast import PredictionError
from deskagent.grammar import Action
from deskagent.llm import LLMClient, StubBackend, StubRule, StubScript, TransportError
from deskagent.oracle import solve
from deskagent.planner import GROUNDING_MARKER, PLANNING_MARKER
from deskagent.simulated import OracleLLM
from deskagent.world import Engine


class ScriptedPolicy:
    """Plays a fixed list of surfaces, then repeats the last one."""

    def __init__(self, catalog, surfaces):
        self.catalog = catalog
        self.surfaces = list(surfaces)
        self.n = 0

    def predict_action(self, context_text):
        s = self.surfaces[min(self.n, len(self.surfaces) - 1)]
        self.n += 1
        if s is None:
            raise PredictionError("no idea")
        return self.catalog.parse_surface(s)


def _stub(*rules):
    return LLMClient(StubBackend(StubScript(tuple(rules))))


PLAN = "Answer 4:\nCompleted: none\nCurrent: look"


# -- switch conditions -----------------------------------------------------------------

def _restated(rewards, action, validity, obs, k):
    phrases = ("no known action can match", "cannot", "doesn't")
    if action is not None and action.template_id == "FOCUS":
        return Condition.CRITICAL
    if validity is False:
        return Condition.INVALID
    if obs is not None and any(p in obs.lower() for p in phrases):
        return Condition.UNEXPECTED
    tail = rewards[-k:]
    if len(tail) == k and not any(tail):
        return Condition.STUCK
    return None


_actions = st.sampled_from([None, Action("FOCUS", ("x",)), Action("LOOK"), Action("OPEN", ("door",))])
_obs = st.sampled_from([None, "Nothing happens.", "The door cannot be opened.", "It doesn't fit.",
                        "No known action can match that input.", "You open the door."])


@given(st.lists(st.sampled_from([0, 0, 0, 5, -5, 10]), max_size=12), _actions, st.sampled_from([None, True, False]),
       _obs, st.integers(1, 6))
def test_check_switch_matches_priority_rules(rewards, action, validity, obs, k):
    cfg = SwitchConfig(stuck_window=k)
    assert check_switch(rewards, action, validity, obs, cfg) == _restated(rewards, action, validity, obs, k)


def test_stuck_boundary():
    assert check_switch([0] * 4, None, True, None) is None
    assert check_switch([0] * 5, None, True, None) is Condition.STUCK
    assert check_switch([0] * 5 + [10], None, True, None) is None
    assert check_switch([10] + [0] * 5, None, True, None) is Condition.STUCK


def test_switch_config_validation():
    with pytest.raises(ValueError):
        SwitchConfig(stuck_window=0)
    with pytest.raises(ValueError):
        SwitchConfig(max_steps=0)


# -- buffer execution ----------------------------------------------------------------

def test_execute_buffer_drains(world, variation_by_id):
    v = variation_by_id["boil-train-0"]
    traj = solve(world, v)
    e = Engine(world, v)
    state, _ = e.reset()
    acts = [t.action for t in traj.transitions[1:3]]
    state, trs, out = execute_buffer(e, state, acts)
    assert out is Outcome.DRAINED and len(trs) == 2


def test_execute_buffer_halts_after_two_faults(world, variation_by_id):
    v = variation_by_id["boil-train-0"]
    e = Engine(world, v)
    state, _ = e.reset()
    cat = world.catalog
    bad = cat.parse_surface("pick up fridge")
    acts = [cat.parse_surface("look around"), bad, cat.parse_surface("look around"), bad, bad, cat.parse_surface("wait")]
    _, trs, out = execute_buffer(e, state, acts)
    assert out is Outcome.HALTED and len(trs) == 5


def test_execute_buffer_stops_at_completion(world, variation_by_id):
    v = variation_by_id["boil-train-0"]
    traj = solve(world, v)
    e = Engine(world, v)
    state, _ = e.reset()
    acts = [t.action for t in traj.transitions[1:]] + [world.catalog.parse_surface("wait")] * 3
    _, trs, out = execute_buffer(e, state, acts)
    assert out is Outcome.TERMINAL and len(trs) == len(traj)


def test_execute_buffer_budget_and_empty(world, variation_by_id):
    v = variation_by_id["boil-train-0"]
    e = Engine(world, v)
    state, _ = e.reset()
    look = world.catalog.parse_surface("look around")
    _, trs, out = execute_buffer(e, state, [look] * 5, budget=2)
    assert len(trs) == 2 and out is Outcome.DRAINED
    with pytest.raises(ValueError):
        execute_buffer(e, state, [])


# -- episodes -------------------------------------------------------------------------

def test_swift_only_never_calls_llm(world, variation_by_id, policy):
    r = run_episode(world, variation_by_id["boil-train-2"], policy, None, SwitchConfig(sage_enabled=False))
    assert r.final_score == 100 and r.total_tokens == 0 and r.strategy == "swift-only"
    assert {m for m, _ in r.mode_log[1:]} == {"swift"}


def test_swift_only_prediction_error_looks_around(world, variation_by_id):
    p = ScriptedPolicy(world.catalog, [None])
    r = run_episode(world, variation_by_id["boil-train-0"], p, None, SwitchConfig(sage_enabled=False, max_steps=3))
    assert [t.action.surface for t in r.trajectory[1:]] == ["look around"] * 3
    assert r.terminated_reason == "max-steps"


def test_sage_requires_llm(world, variation_by_id, policy):
    with pytest.raises(ValueError):
        run_episode(world, variation_by_id["boil-train-0"], policy, None)


def test_invalid_prediction_triggers_sage_before_execution(world, variation_by_id):
    p = ScriptedPolicy(world.catalog, ["pick up fridge", "look around"])
    llm = _stub(StubRule(PLAN, (PLANNING_MARKER,)), StubRule("LOOK()\nLOOK()", (GROUNDING_MARKER,)))
    r = run_episode(world, variation_by_id["boil-train-0"], p, llm, SwitchConfig(max_steps=4, max_sage_calls=1))
    assert "pick up fridge" not in [t.action.surface for t in r.trajectory]
    assert r.events[0] == {"event": "switch", "t": 0, "condition": "invalid", "predicted": "pick up fridge"}
    assert r.mode_log[1:3] == [("sage", "invalid"), ("sage", "invalid")]


def test_critical_action_is_gated(world, variation_by_id):
    p = ScriptedPolicy(world.catalog, ["focus on red box"])
    llm = _stub(StubRule(PLAN, (PLANNING_MARKER,)), StubRule("LOOK()", (GROUNDING_MARKER,)))
    r = run_episode(world, variation_by_id["thermometer-train-0"], p, llm, SwitchConfig(max_steps=3, max_sage_calls=2))
    assert all(t.action.template_id != "FOCUS" for t in r.trajectory)
    assert r.sage_invocations[0]["condition"] == "critical"
    assert r.terminated_reason == "max-sage-calls"


def test_stuck_triggers_after_window(world, variation_by_id):
    p = ScriptedPolicy(world.catalog, ["look around"])
    llm = _stub(StubRule(PLAN, (PLANNING_MARKER,)), StubRule("WAIT()", (GROUNDING_MARKER,)))
    r = run_episode(world, variation_by_id["boil-train-0"], p, llm, SwitchConfig(max_steps=8))
    first = next(e for e in r.events if e["event"] == "switch")
    assert first["condition"] == "stuck" and first["t"] == 5


def test_unexpected_observation_triggers_sage(world, variation_by_id):
    # the stove in this variation is broken: activating it is valid but fails
    p = ScriptedPolicy(world.catalog, ["teleport to kitchen", "activate stove", "look around"])
    llm = _stub(StubRule(PLAN, (PLANNING_MARKER,)), StubRule("LOOK()", (GROUNDING_MARKER,)))
    r = run_episode(world, variation_by_id["boil-test-0"], p, llm, SwitchConfig(max_steps=4))
    assert r.trajectory[2].valid and "cannot" in r.trajectory[2].observation
    assert r.events[0] == {"event": "switch", "t": 2, "condition": "unexpected", "predicted": "activate stove"}
    assert r.mode_log[2] == ("swift", None) and r.mode_log[3] == ("sage", "unexpected")


def test_empty_buffer_spends_one_look(world, variation_by_id):
    p = ScriptedPolicy(world.catalog, ["pick up fridge", "look around"])
    llm = _stub(StubRule(PLAN, (PLANNING_MARKER,)), StubRule("I have no idea.", (GROUNDING_MARKER,)))
    r = run_episode(world, variation_by_id["boil-train-0"], p, llm, SwitchConfig(max_steps=2))
    assert r.trajectory[1].action.surface == "look around" and r.mode_log[1] == ("sage", "invalid")
    assert r.sage_invocations[0]["outcome"] == "empty-buffer"


def test_planning_parse_failure_falls_back_to_swift(world, variation_by_id):
    p = ScriptedPolicy(world.catalog, ["pick up fridge"] + ["look around"] * 20)
    llm = _stub(StubRule("gibberish", ()))
    r = run_episode(world, variation_by_id["boil-train-0"], p, llm, SwitchConfig(max_steps=6))
    assert r.sage_invocations[0]["outcome"] == "planning-parse-failure"
    assert [c.stage for c in r.llm_calls[:2]] == ["planning", "planning"]
    # fallback suppresses the stuck check for stuck_window Swift steps
    assert [m for m, _ in r.mode_log[1:6]] == ["swift"] * 5


def test_transport_failure_ends_episode(world, variation_by_id):
    class Down:
        def complete(self, request):
            raise TransportError("connection refused")

    p = ScriptedPolicy(world.catalog, ["pick up fridge"])
    r = run_episode(world, variation_by_id["boil-train-0"], p, LLMClient(Down()))
    assert r.terminated_reason == "llm-failure"


def test_swiftsage_with_simulated_llm(world, variation_by_id, policy, train_variations, test_variations):
    oracle = OracleLLM(world, train_variations + test_variations)
    v = variation_by_id["boil-test-0"]
    r = run_episode(world, v, policy, LLMClient(oracle.fork()))
    assert r.final_score == 100 and r.terminated_reason == "completed"
    sage = r.sage_invocations
    assert sage and len(r.llm_calls) == sum(e.get("planning_attempts", 2) + 1 for e in sage)
    assert len(r.mode_log) == len(r.trajectory)
    assert sum(m == "sage" for m, _ in r.mode_log) == sum(e["executed"] for e in sage)


def test_llm_every_step_baseline(world, variation_by_id, train_variations):
    oracle = OracleLLM(world, train_variations)
    v = variation_by_id["plant-train-1"]
    r = run_llm_every_step(world, v, LLMClient(oracle.fork()))
    assert r.final_score == 100
    assert len(r.llm_calls) == r.num_actions and {c.stage for c in r.llm_calls} == {"action"}


def test_llm_every_step_unparseable_reply(world, variation_by_id):
    r = run_llm_every_step(world, variation_by_id["boil-train-0"], _stub(StubRule("dance!", ())), SwitchConfig(max_steps=2))
    assert not r.trajectory[1].valid and r.events[0]["event"] == "unparseable-action"


def test_step_prompt_ends_with_marker(world, variation_by_id):
    traj = solve(world, variation_by_id["boil-train-0"]).transitions[:2]
    assert build_step_prompt("Do it.", traj, world.catalog).endswith(BASELINE_MARKER)


def test_oracle_strategy(world, variation_by_id):
    r = run_oracle(world, variation_by_id["plant-test-0"])
    assert r.final_score == 100 and r.total_tokens == 0 and len(r.mode_log) == len(r.trajectory)


def test_last_nonnegative_score():
    from deskagent.controller import EpisodeResult
    from deskagent.world import Transition

    def t(score):
        return Transition(Action("LOOK"), "o", "e", "i", score, 0, True, "r")

    r = EpisodeResult("v", "f", "s", [t(0), t(30), t(-100)], [])
    assert r.final_score == -100 and r.last_nonnegative_score == 30
    assert EpisodeResult("v", "f", "s", [t(-5)], []).last_nonnegative_score == 0
