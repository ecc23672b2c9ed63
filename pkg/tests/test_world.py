from __future__ import annotations

import itertools
import random

import pytest
import yaml

from deskagent.grammar import Action
from deskagent.world import Engine, ResetError, SpecError, Transition, load_task_family, load_world
from deskagent.world.spec import Milestone, TaskVariation, Violation
from deskagent.world.text import (
    NO_MATCH,
    detect_exception,
    parse_exits,
    parse_object_names,
    parse_room_name,
)

from conftest import SMALL_FAMILY, SMALL_WORLD


def _act(world, text):
    return world.catalog.parse_surface(text)


def _run(engine, state, commands):
    trs = []
    for c in commands:
        state, tr = engine.step(state, _act(engine.world, c))
        trs.append(tr)
    return state, trs


# -- loading -----------------------------------------------------------------------

def _world_doc(**changes):
    doc = yaml.safe_load(SMALL_WORLD)
    doc.update(changes)
    return doc


def test_bundled_world_loads(world):
    assert world.start_room == "hallway"
    assert set(world.room_names) == {"hallway", "kitchen", "workshop", "greenhouse", "outside"}
    assert world.adjacency["greenhouse"] == ("hallway", "outside")


@pytest.mark.parametrize(
    "change, message",
    [
        ({"schema_version": 2}, "schema_version"),
        ({"start_room": "attic"}, "start_room"),
        ({"rooms": [{"name": "den", "connections": ["lab"]}, {"name": "lab"}, {"name": "attic"}]}, "not connected"),
        ({"rooms": [{"name": "den", "connections": ["nowhere"]}]}, "unknown room"),
        ({"rooms": [{"name": "den"}, {"name": "den"}]}, "duplicate room"),
    ],
)
def test_world_validation_errors(change, message):
    with pytest.raises(SpecError, match=message):
        load_world(_world_doc(**change))


@pytest.mark.parametrize(
    "obj, message",
    [
        ({"name": "cup on shelf", "container": "den"}, "reserved"),
        ({"name": "Big Cup", "container": "den"}, "lowercase"),
        ({"name": "cup", "container": "pip"}, "not a container"),
        ({"name": "cup", "container": "attic"}, "unknown room or object"),
        ({"name": "cup", "properties": ["magic"], "container": "den"}, "unknown"),
        ({"name": "pan", "container": "den"}, "duplicate"),
    ],
)
def test_object_validation_errors(obj, message):
    doc = _world_doc()
    doc["objects"] = doc["objects"] + [obj]
    with pytest.raises(SpecError, match=message):
        load_world(doc)


def test_containment_cycle_rejected():
    doc = _world_doc()
    doc["objects"] = [
        {"name": "box", "properties": ["container"], "container": "bag"},
        {"name": "bag", "properties": ["container"], "container": "box"},
    ]
    with pytest.raises(SpecError, match="cycle"):
        load_world(doc)


def test_unknown_template_rejected():
    doc = _world_doc(action_templates=[{"id": "FLY", "arity": 1, "pattern": "fly to {0}"}])
    with pytest.raises(SpecError, match="no rule"):
        load_world(doc)


def test_family_validation(small_world):
    doc = yaml.safe_load(SMALL_FAMILY)
    doc["milestones"][0]["points"] = 10
    with pytest.raises(SpecError, match="sum to"):
        load_task_family(doc, small_world).variations("train")
    doc = yaml.safe_load(SMALL_FAMILY)
    doc["milestones"][0]["when"] = {"inside": ["{substance}", "kettle"]}
    with pytest.raises(SpecError, match="kettle"):
        load_task_family(doc, small_world).variations("train")
    doc = yaml.safe_load(SMALL_FAMILY)
    doc["splits"]["train"]["count"] = 5
    with pytest.raises(SpecError, match="only allow"):
        load_task_family(doc, small_world).variations("train")


def test_variations_are_deterministic_and_disjoint(train_variations, test_variations):
    from deskagent.world import bundled_variations

    assert [v.id for v in bundled_variations("test")] == [v.id for v in test_variations]
    for fam in ("boil", "plant", "thermometer"):
        tr = [v for v in train_variations if v.family == fam]
        te = [v for v in test_variations if v.family == fam]
        assert len(tr) == 10 and len(te) == 10
        assert {v.task_description for v in tr}.isdisjoint(v.task_description for v in te)
        assert any(v.exceptions for v in te), fam


def test_reset_rejects_presatisfied_milestone(small_world, small_variation):
    bad = TaskVariation(
        id="x", family="simmer", split="train", index=0, task_description="t",
        milestones=(Milestone("here", 100, {"in_room": "den"}),),
    )
    with pytest.raises(ResetError, match="already holds"):
        Engine(small_world, bad).reset()


# -- dynamics ------------------------------------------------------------------------

def test_reset_observation(world, variation_by_id):
    v = variation_by_id["boil-test-1"]
    state, tr = Engine(world, v).reset()
    assert tr.action.surface == "look around"
    assert tr.score == 0 and tr.reward == 0 and tr.valid
    assert tr.env_text.startswith("This room is called the hallway.")
    assert state.time == 0


def test_invalid_action_leaves_state_unchanged(small_world, small_variation):
    e = Engine(small_world, small_variation)
    state, _ = e.reset()
    new, tr = e.step(state, _act(small_world, "pick up burner"))
    assert new == state
    assert not tr.valid and tr.reward == 0 and tr.observation == NO_MATCH


def test_boil_sequence_scores_milestones_once(small_world, small_variation):
    e = Engine(small_world, small_variation)
    state, _ = e.reset()
    state, trs = _run(e, state, [
        "open crate", "pour broth into pan", "pick up pan", "teleport to lab",
        "move pan to burner", "activate burner", "wait", "wait",
    ])
    assert [t.reward for t in trs] == [0, 40, 0, 0, 0, 0, 60, 0]
    assert state.score == 100
    assert "gas" in state.states_of("broth")
    assert all(t.valid for t in trs)


def test_broken_device_is_valid_but_reports_exception(world, variation_by_id):
    v = variation_by_id["boil-test-0"]
    e = Engine(world, v)
    state, _ = e.reset()
    state, _ = _run(e, state, ["teleport to kitchen"])
    act = _act(world, "activate stove")
    assert act in e.valid_actions(state)
    new, tr = e.step(state, act)
    assert tr.valid
    assert "cannot" in tr.observation and detect_exception(tr.observation)
    assert "activated" not in new.states_of("stove")


def test_thermometer_reading(world, variation_by_id):
    v = variation_by_id["thermometer-train-0"]
    e = Engine(world, v)
    state, _ = e.reset()
    temp = int(v.bindings["temperature"])
    loc, room = v.bindings["location"], v.bindings["room"]
    cmds = ["teleport to kitchen", "open drawer", "pick up thermometer"]
    cmds += [] if room == "kitchen" else [f"teleport to {room}"]
    cmds += [f"open {loc}"] if loc in ("fridge", "cupboard") else []
    state, trs = _run(e, state, cmds + [f"use thermometer on {v.bindings['substance']}"])
    assert trs[-1].observation == f"The temperature is {temp}F."


def test_violation_terminates_with_penalty(small_world, small_variation):
    from dataclasses import replace

    v = replace(small_variation, violations=(Violation("wrong", {"focused": "pan"}, -10),))
    e = Engine(small_world, v)
    state, _ = e.reset()
    state, tr = e.step(state, _act(small_world, "focus on pan"))
    assert tr.terminal and state.terminated and tr.score == -10
    state2, tr2 = e.step(state, _act(small_world, "look around"))
    assert not tr2.valid and state2 == state
    assert e.valid_actions(state) == frozenset()


def test_resolve_qualified_reference(world, variation_by_id):
    v = variation_by_id["boil-train-0"]
    e = Engine(world, v)
    state, _ = e.reset()
    state, _ = _run(e, state, ["teleport to kitchen"])
    act = e.resolve(state, Action("EXAMINE", ("the metal pot in counter",)))
    assert act.args == ("metal pot",)


def test_render_and_parse_helpers(world, variation_by_id):
    v = variation_by_id["boil-train-0"]
    e = Engine(world, v)
    state, _ = e.reset()
    state, trs = _run(e, state, ["teleport to kitchen", "pick up metal pot"])
    env = trs[-1].env_text
    assert parse_room_name(env) == "kitchen"
    assert parse_exits(env) == ["hallway"]
    names = parse_object_names(env)
    assert "fridge" in names and "metal pot" not in names
    assert parse_object_names(trs[-1].inventory_text) == ["metal pot"]


def test_transition_dict_round_trip(world, variation_by_id):
    e = Engine(world, variation_by_id["plant-test-3"])
    state, tr = e.reset()
    state, tr = e.step(state, _act(world, "teleport to greenhouse"))
    assert Transition.from_dict(tr.to_dict()) == tr


def test_state_json_is_canonical(world, variation_by_id):
    e = Engine(world, variation_by_id["plant-test-3"])
    s1, _ = e.reset()
    s2, _ = e.reset()
    assert s1.to_json() == s2.to_json()


# -- valid_actions completeness -----------------------------------------------------------

def _brute_force_check(engine, state):
    names = list(engine.world.room_names) + [o.name for o in engine.world.objects]
    valid = engine.valid_actions(state)
    cat = engine.catalog
    for t in cat:
        for args in itertools.product(names, repeat=t.arity):
            act = cat.make(t.id, args)
            _, tr = engine.step(state, act)
            assert (act in valid) == tr.valid, (act.surface, tr.observation)


def test_valid_actions_matches_step_brute_force(small_world, small_variation):
    e = Engine(small_world, small_variation)
    rng = random.Random(7)
    state, _ = e.reset()
    for _ in range(40):
        _brute_force_check(e, state)
        acts = sorted(e.valid_actions(state), key=lambda a: a.surface)
        if not acts:
            break
        state, _ = e.step(state, rng.choice(acts))


def test_fuzz_invariants_small(world, test_variations):
    from deskagent.world.engine import EnvState

    rng = random.Random(3)
    for v in test_variations[::3]:
        e = Engine(world, v)
        state, first = e.reset()
        total, fired = 0, set()
        for _ in range(150):
            acts = sorted(e.valid_actions(state), key=lambda a: a.surface)
            if not acts:
                break
            state, tr = e.step(state, rng.choice(acts))
            total += tr.reward
            assert 0 <= tr.score <= 100
            assert len(set(state.achieved)) == len(state.achieved)
            fired.update(state.achieved)
        assert total == state.score - first.score
        assert isinstance(state, EnvState)
