from __future__ import annotations

import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from deskagent.fast import (
    BalanceConfig,
    DatasetError,
    PredictionError,
    RetrievalPolicy,
    SubprocessPolicy,
    SwiftContext,
    build_dataset,
    load_examples,
    parse_context,
    save_examples,
    serialize_context,
)
from deskagent.oracle import solve

_word = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8)
_phrase = st.lists(_word, min_size=1, max_size=6).map(" ".join)
_step = st.tuples(_phrase, st.integers(-100, 100), _phrase)


@st.composite
def contexts(draw):
    return SwiftContext(
        task_description=draw(_phrase),
        time=draw(st.integers(0, 500)),
        score=draw(st.integers(-100, 100)),
        window=tuple(draw(st.lists(_step, max_size=10))),
        current_room_text=draw(_phrase),
        inventory_text=draw(_phrase),
        visited_rooms=tuple(draw(st.lists(_word, max_size=5, unique=True))),
    )


@given(contexts())
def test_context_round_trip(ctx):
    text = serialize_context(ctx)
    assert "\n" not in text
    assert parse_context(text) == ctx


def test_context_layout(world, oracle_trajectories):
    tr = oracle_trajectories[0]
    ctx = SwiftContext.from_history(tr.task_description, tr.transitions[:3])
    text = serialize_context(ctx)
    assert text.startswith(f"Task: {' '.join(tr.task_description.split())}; Time: 2; ")
    assert "Action history: [look around (+0) → " in text
    assert ctx.visited_rooms[0] == tr.transitions[0].location


def test_context_window_is_bounded(oracle_trajectories):
    tr = max(oracle_trajectories, key=len)
    ctx = SwiftContext.from_history(tr.task_description, tr.transitions, window=3)
    assert len(ctx.window) == 3 and ctx.window[-1][0] == tr.transitions[-1].action.surface
    with pytest.raises(ValueError):
        SwiftContext("t", 0, 0, (("a", 0, "b"),) * 11, "r", "i", ())
    with pytest.raises(ValueError):
        parse_context("not a context")


def test_dataset_one_example_per_step(oracle_trajectories):
    ex = build_dataset(oracle_trajectories)
    assert len(ex) == sum(len(t) for t in oracle_trajectories)
    assert [e.id for e in ex] == list(range(len(ex)))
    assert all(e.target != "look around" or e.step > 0 for e in ex)


def test_dataset_family_cap_and_downsample(oracle_trajectories):
    capped = build_dataset(oracle_trajectories, BalanceConfig(max_trajectories_per_family=2, seed=3))
    per_family = {}
    for e in capped:
        per_family.setdefault(e.task_family, set()).add(e.variation_id)
    assert all(len(v) == 2 for v in per_family.values())

    full = build_dataset(oracle_trajectories)
    n_close = sum(e.target.startswith("close ") for e in full)
    thinned = build_dataset(oracle_trajectories, BalanceConfig(downsample={"close *": 0.0}))
    assert not any(e.target.startswith("close ") for e in thinned)
    assert len(thinned) == len(full) - n_close
    kept = build_dataset(oracle_trajectories, BalanceConfig(downsample={"close *": 1.0}))
    assert len(kept) == len(full)

    a = build_dataset(oracle_trajectories, BalanceConfig(downsample={"teleport *": 0.5}, seed=7))
    b = build_dataset(oracle_trajectories, BalanceConfig(downsample={"teleport *": 0.5}, seed=7))
    assert a == b


def test_dataset_downweight_and_errors(oracle_trajectories):
    ex = build_dataset(oracle_trajectories, BalanceConfig(downweight={"wait*": 0.25}))
    assert {e.weight for e in ex if e.target.startswith("wait")} == {0.25}
    with pytest.raises(DatasetError):
        build_dataset([])


def test_dataset_save_load(tmp_path, oracle_trajectories):
    ex = build_dataset(oracle_trajectories[:3])
    save_examples(ex, tmp_path / "d.jsonl")
    assert load_examples(tmp_path / "d.jsonl") == ex
    (tmp_path / "bad.jsonl").write_text('{"schema": "other"}\n')
    with pytest.raises(DatasetError):
        load_examples(tmp_path / "bad.jsonl")


def test_policy_memorizes_training_data(policy, oracle_trajectories):
    ex = build_dataset(oracle_trajectories)
    assert policy.score([e.context_text for e in ex], [e.target for e in ex]) == 1.0
    assert policy.n_examples_ == len(ex)


def test_policy_generalizes_to_held_out(world, policy, variation_by_id):
    traj = solve(world, variation_by_id["boil-test-3"])
    ctx = SwiftContext.from_history(traj.task_description, traj.transitions[:1])
    assert policy.predict_action(serialize_context(ctx)).surface == traj.transitions[1].action.surface


def test_policy_is_deterministic_and_sklearn_compatible(policy, oracle_trajectories):
    ex = build_dataset(oracle_trajectories)
    X = [e.context_text for e in ex]
    twin = clone(policy).fit(X, [e.target for e in ex], sample_weight=[e.weight for e in ex],
                             groups=[e.task_family for e in ex])
    assert twin.fingerprint_ == policy.fingerprint_
    assert isinstance(policy.predict(X[:5]), np.ndarray)
    assert policy.get_params()["task_weight"] == 3.0
    assert clone(policy).set_params(remap_arguments=False).remap_arguments is False


def test_policy_save_load(tmp_path, world, policy, oracle_trajectories):
    policy.save(tmp_path / "p.json")
    loaded = RetrievalPolicy.load(tmp_path / "p.json", catalog=world.catalog)
    assert loaded.fingerprint_ == policy.fingerprint_
    X = [e.context_text for e in build_dataset(oracle_trajectories[:4])]
    assert list(loaded.predict(X)) == list(policy.predict(X))
    (tmp_path / "x.json").write_text('{"kind": "other"}')
    with pytest.raises(ValueError):
        RetrievalPolicy.load(tmp_path / "x.json")


def test_policy_input_validation(world, oracle_trajectories):
    ex = build_dataset(oracle_trajectories[:1])
    X, y = [e.context_text for e in ex], [e.target for e in ex]
    p = RetrievalPolicy(catalog=world.catalog)
    with pytest.raises(TypeError):
        p.fit(X[0], y)
    with pytest.raises(ValueError):
        p.fit([], [])
    with pytest.raises(ValueError):
        p.fit(X, y[:-1])
    with pytest.raises(ValueError):
        p.fit(X, ["dance wildly"] + y[1:])
    with pytest.raises(ValueError):
        p.fit(["garbage"] + X[1:], y)
    with pytest.raises(ValueError):
        p.fit(X, y, sample_weight=[0.0] * len(X))
    with pytest.raises(Exception):
        RetrievalPolicy().nearest(X[0])


def test_subprocess_policy(tmp_path, world, oracle_trajectories):
    script = tmp_path / "child.py"
    script.write_text(textwrap.dedent("""
        import sys
        for line in sys.stdin:
            print("look around" if line.startswith("Task:") else "gibberish", flush=True)
    """))
    ctx = build_dataset(oracle_trajectories[:1])[0].context_text
    with SubprocessPolicy([sys.executable, str(script)], world.catalog) as p:
        assert p.predict_action(ctx).surface == "look around"
        assert p.predict_action(ctx).surface == "look around"
        with pytest.raises(PredictionError):
            p.predict_action("nope")
        with pytest.raises(ValueError):
            p.predict_action("a\nb")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_policy_always_returns_grammatical_action(world, policy, seed):
    import random
    rng = random.Random(seed)
    ctx = SwiftContext(
        task_description=rng.choice(["Your task is to boil water.", "Your task is to grow a plant.", "xyz"]),
        time=rng.randint(0, 40), score=rng.randint(0, 100),
        window=(("look around", 0, "You see stuff."),), current_room_text="This room is called the kitchen. You see: a fridge.",
        inventory_text="In your inventory, you see: nothing.", visited_rooms=("kitchen",),
    )
    action = policy.predict_action(serialize_context(ctx))
    assert world.catalog.parse_surface(action.surface) == action
