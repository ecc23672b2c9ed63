"""Handcrafted per-family solvers that produce gold trajectories.

Each :class:`OracleScript` is a list of named subgoals. A subgoal turns
the variation bindings (and the live state, for things like "is the fridge
already open") into surface commands. :func:`solve` runs them through the
engine and refuses to return anything that does not reach score 100
cleanly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .world import Engine, EnvState, TaskVariation, Transition, WorldSpec
from .world.text import detect_exception

Planner = Callable[[Mapping[str, str], TaskVariation, Engine, EnvState], Iterable[str]]


class UnsupportedTaskError(LookupError):
    pass


class SolverError(RuntimeError):
    def __init__(self, variation: str, subgoal: str, detail: str):
        super().__init__(f"{variation}: subgoal {subgoal!r} failed: {detail}")
        self.variation = variation
        self.subgoal = subgoal


@dataclass(frozen=True)
class Trajectory:
    variation_id: str
    family: str
    task_description: str
    transitions: tuple[Transition, ...]

    @property
    def actions(self) -> list[str]:
        return [t.action.surface for t in self.transitions]

    @property
    def final_score(self) -> int:
        return self.transitions[-1].score

    def __len__(self) -> int:
        # the implicit opening "look around" is not an agent action
        return len(self.transitions) - 1


@dataclass(frozen=True)
class OracleScript:
    family: str
    plan: tuple[tuple[str, Planner], ...]

    def subgoals(self) -> list[str]:
        return [name for name, _ in self.plan]


def _room_of(engine: Engine, state: EnvState, name: str) -> str:
    return engine.room_of(state, name)


def _go(engine: Engine, state: EnvState, room: str) -> list[str]:
    return [] if state.agent_room == room else [f"teleport to {room}"]


def _holds(engine: Engine, state: EnvState, **pred) -> bool:
    return engine.holds(state, pred)


def _reach(engine: Engine, state: EnvState, name: str) -> tuple[list[str], list[str]]:
    """Commands that bring ``name`` into reach, and the containers they open."""
    if name in engine.held(state):
        return [], []
    cmds = _go(engine, state, _room_of(engine, state, name))
    opened = []
    chain = list(engine._ancestors(state, name))
    for container in reversed(chain):
        if "closed" in state.states_of(container):
            opened.append(container)
    cmds += [f"open {c}" for c in opened]
    return cmds, opened


def _close(opened: list[str]) -> list[str]:
    return [f"close {c}" for c in reversed(opened)]


def _working(engine: Engine, state: EnvState, prop: str, prefer: str) -> str:
    """``prefer`` unless it is broken, else the first unbroken object with ``prop``."""
    if "broken" not in state.states_of(prefer):
        return prefer
    for name in sorted(engine.world.protos, key=engine.world.object_order.get):
        if engine.world.protos[name].has(prop) and "broken" not in state.states_of(name):
            return name
    raise SolverError("", "find device", f"no working object with property {prop!r}")


# -- boil ----------------------------------------------------------------------

def _boil_fetch(b, v, engine, state):
    sub = b["substance"]
    if _holds(engine, state, inside=[sub, "metal pot"]):
        return []
    cmds, opened = _reach(engine, state, sub)
    cmds.append(f"pour {sub} into metal pot")
    return cmds + _close(opened)


def _boil_heat(b, v, engine, state):
    sub = b["substance"]
    source = _working(engine, state, "heat_source", "stove")
    if _holds(engine, state, inside_active=[sub, "heat_source"]):
        return []
    cmds: list[str] = []
    if not engine.inside(state, "metal pot", source):
        pot_room, src_room = _room_of(engine, state, "metal pot"), _room_of(engine, state, source)
        held = "metal pot" in state.inventory
        if not held and pot_room != src_room:
            cmds += _go(engine, state, pot_room) + ["pick up metal pot"]
            cmds += [f"teleport to {src_room}"]
        else:
            cmds += _go(engine, state, src_room)
        cmds.append(f"move metal pot to {source}")
    if "activated" not in state.states_of(source):
        cmds += ([] if cmds else _go(engine, state, _room_of(engine, state, source)))
        cmds.append(f"activate {source}")
    return cmds


def _boil_wait(b, v, engine, state):
    return [] if _holds(engine, state, has_state=[b["substance"], "gas"]) else ["wait"]


# -- plant ---------------------------------------------------------------------

def _plant_can(b, v, engine, state):
    if "watering can" in engine.held(state):
        return []
    if _room_of(engine, state, "watering can") == "greenhouse":
        return []  # picked up on the way to watering
    return _go(engine, state, _room_of(engine, state, "watering can")) + ["pick up watering can"]


def _plant_soil(b, v, engine, state):
    if _holds(engine, state, inside=["soil", "flower pot"]):
        return []
    cmds, opened = _reach(engine, state, "soil")
    room = _room_of(engine, state, "soil")
    if "soil" not in engine.held(state):
        cmds += ["pick up soil"] + _close(opened)
    if room != "greenhouse":
        cmds.append("teleport to greenhouse")
    return cmds + ["move soil to flower pot"]


def _plant_sow(b, v, engine, state):
    seed = b["seed"]
    if _holds(engine, state, inside=[seed, "flower pot"]):
        return []
    return _go(engine, state, "greenhouse") + [f"move {seed} to flower pot"]


def _plant_water(b, v, engine, state):
    if _holds(engine, state, has_state=["flower pot", "watered"]):
        return []
    cmds: list[str] = []
    here = state.agent_room
    if "watering can" not in engine.held(state):
        here = _room_of(engine, state, "watering can")
        cmds += _go(engine, state, here) + ["pick up watering can"]
    if here != "greenhouse":
        cmds.append("teleport to greenhouse")
    return cmds + ["use watering can on flower pot"]


def _plant_wait(b, v, engine, state):
    return [] if _holds(engine, state, has_state=[b["seed"], "sprouted"]) else ["wait"]


# -- thermometer ---------------------------------------------------------------

def _thermometer_held(engine: Engine, state: EnvState) -> str | None:
    for o in engine.held(state):
        if engine.world.protos[o].has("thermometer") and "broken" not in state.states_of(o):
            return o
    return None


def _thermo_tool(b, v, engine, state):
    if _thermometer_held(engine, state) or _holds(engine, state, measured=b["substance"]):
        return []
    tool = _working(engine, state, "thermometer", "thermometer")
    cmds, opened = _reach(engine, state, tool)
    return cmds + [f"pick up {tool}"] + _close(opened)


def _thermo_measure(b, v, engine, state):
    sub = b["substance"]
    if _holds(engine, state, measured=sub):
        return []
    tool = _thermometer_held(engine, state)
    cmds, opened = _reach(engine, state, sub)
    cmds.append(f"use {tool} on {sub}")
    return cmds + _close(opened)


def _thermo_answer(b, v, engine, state):
    if _holds(engine, state, focused=b["box"]):
        return []
    return _go(engine, state, "workshop") + [f"focus on {b['box']}"]


SCRIPTS: dict[str, OracleScript] = {
    "boil": OracleScript(
        "boil",
        (("fetch substance", _boil_fetch), ("heat substance", _boil_heat), ("wait for boiling", _boil_wait)),
    ),
    "plant": OracleScript(
        "plant",
        (
            ("get watering can", _plant_can),
            ("restore soil", _plant_soil),
            ("sow seed", _plant_sow),
            ("water pot", _plant_water),
            ("wait for sprout", _plant_wait),
        ),
    ),
    "thermometer": OracleScript(
        "thermometer",
        (("get thermometer", _thermo_tool), ("measure substance", _thermo_measure), ("choose box", _thermo_answer)),
    ),
}


def bind(variation: TaskVariation) -> dict[str, str]:
    """Concrete arguments for a variation's script."""
    if variation.family not in SCRIPTS:
        raise UnsupportedTaskError(f"no oracle script for task family {variation.family!r}")
    return dict(variation.bindings)


@dataclass(frozen=True)
class SubgoalPlan:
    name: str
    commands: tuple[str, ...]

    @property
    def done(self) -> bool:
        return not self.commands


def _script(variation: TaskVariation) -> OracleScript:
    script = SCRIPTS.get(variation.family)
    if script is None:
        raise UnsupportedTaskError(f"no oracle script for task family {variation.family!r}")
    return script


def _execute(
    engine: Engine, variation: TaskVariation, state: EnvState
) -> tuple[list[SubgoalPlan], list[Transition]]:
    script = _script(variation)
    bindings = bind(variation)
    plans: list[SubgoalPlan] = []
    transitions: list[Transition] = []
    for name, planner in script.plan:
        cmds = tuple(planner(bindings, variation, engine, state))
        plans.append(SubgoalPlan(name, cmds))
        for cmd in cmds:
            try:
                action = engine.world.catalog.parse_surface(cmd)
            except ValueError as exc:
                raise SolverError(variation.id, name, str(exc)) from exc
            state, tr = engine.step(state, action)
            transitions.append(tr)
            if not tr.valid or detect_exception(tr.observation):
                raise SolverError(variation.id, name, f"{cmd!r} -> {tr.observation}")
            if tr.terminal and state.score < 100:
                raise SolverError(variation.id, name, f"{cmd!r} violated the task")
    if state.score != 100:
        raise SolverError(variation.id, script.plan[-1][0], f"final score {state.score}, expected 100")
    return plans, transitions


def plan_from(engine: Engine, variation: TaskVariation, state: EnvState) -> list[SubgoalPlan]:
    """The script's subgoals replanned from ``state``; finished ones are empty.

    The plan is checked by simulation, so a returned plan is known to reach
    score 100 from ``state``.
    """
    return _execute(engine, variation, state)[0]


def solve(world: WorldSpec, variation: TaskVariation) -> Trajectory:
    """Run the family script and return a trajectory ending at score 100."""
    _script(variation)
    engine = Engine(world, variation)
    state, first = engine.reset()
    _, transitions = _execute(engine, variation, state)
    return Trajectory(variation.id, variation.family, variation.task_description, (first, *transitions))
