"""The text-world simulator.

:class:`Engine` binds a world to one task variation. It holds no mutable
state: :meth:`Engine.reset` and :meth:`Engine.step` return fresh
:class:`EnvState` values, so any number of episodes can share an engine.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Collection, Iterator, Mapping

from ..grammar import Action, GrammarError
from . import text
from .spec import AGENT, SpecError, TaskVariation, WorldSpec, validate_variation

WAIT_TICKS = 10
HEAT_PER_TICK = 25
MAX_TEMPERATURE = 500
SPROUT_TICKS = 5


class ResetError(SpecError):
    pass


@dataclass(frozen=True)
class EnvState:
    time: int
    agent_room: str
    containment: Mapping[str, str]
    object_states: Mapping[str, frozenset[str]]
    temperatures: Mapping[str, int]
    inventory: tuple[str, ...] = ()
    score: int = 0
    achieved: tuple[int, ...] = ()
    facts: frozenset[str] = frozenset()
    counters: Mapping[str, int] = field(default_factory=dict)
    terminated: bool = False

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["object_states"] = {k: sorted(v) for k, v in sorted(self.object_states.items())}
        d["containment"] = dict(sorted(self.containment.items()))
        d["temperatures"] = dict(sorted(self.temperatures.items()))
        d["counters"] = dict(sorted(self.counters.items()))
        d["facts"] = sorted(self.facts)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def states_of(self, name: str) -> frozenset[str]:
        return self.object_states.get(name, frozenset())


@dataclass(frozen=True)
class Transition:
    action: Action
    observation: str
    env_text: str
    inventory_text: str
    score: int
    reward: int
    valid: bool
    location: str
    terminal: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action.surface,
            "template": self.action.template_id,
            "args": list(self.action.args),
            "observation": self.observation,
            "env_text": self.env_text,
            "inventory_text": self.inventory_text,
            "score": self.score,
            "reward": self.reward,
            "valid": self.valid,
            "location": self.location,
            "terminal": self.terminal,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Transition":
        return cls(
            action=Action(d["template"], tuple(d["args"]), d["action"]),
            observation=d["observation"],
            env_text=d["env_text"],
            inventory_text=d["inventory_text"],
            score=d["score"],
            reward=d["reward"],
            valid=d["valid"],
            location=d["location"],
            terminal=d.get("terminal", False),
        )


class Engine:
    def __init__(self, world: WorldSpec, variation: TaskVariation):
        self.world = world
        self.variation = variation
        self.catalog = world.catalog
        self._children: tuple[Mapping[str, str], dict[str, list[str]]] | None = None

    # -- construction -------------------------------------------------------

    def reset(self) -> tuple[EnvState, Transition]:
        w, v = self.world, self.variation
        try:
            validate_variation(w, v)
        except SpecError as exc:
            raise ResetError(str(exc)) from exc
        containment = {o.name: o.container for o in w.objects}
        states = {o.name: o.states for o in w.objects}
        temps = {o.name: o.temperature for o in w.objects}
        for p in v.initial_state_overrides:
            if not w.is_object(p.object):
                raise ResetError(f"variation {v.id}: override names unknown object {p.object!r}")
            if p.container is not None:
                containment[p.object] = p.container
            if p.states is not None:
                states[p.object] = frozenset(p.states)
            if p.temperature is not None:
                temps[p.object] = p.temperature
        for e in v.exceptions:
            if e.kind == "disabled-device":
                if not w.protos[e.target].has("device") and not w.protos[e.target].has("thermometer"):
                    raise ResetError(f"variation {v.id}: {e.target!r} cannot be disabled")
                states[e.target] = states[e.target] | {"broken"}
            elif e.kind == "missing-object":
                if not e.relocate_to:
                    raise ResetError(f"variation {v.id}: missing-object exception needs relocate_to")
                containment[e.target] = e.relocate_to
        for obj, cont in containment.items():
            if w.is_object(cont) and not w.protos[cont].has("container"):
                raise ResetError(f"variation {v.id}: {cont!r} is not a container")
            seen, cur = {obj}, cont
            while w.is_object(cur):
                if cur in seen:
                    raise ResetError(f"variation {v.id}: containment cycle through {obj!r}")
                seen.add(cur)
                cur = containment[cur]
        state = EnvState(
            time=0,
            agent_room=w.start_room,
            containment=containment,
            object_states=states,
            temperatures=temps,
        )
        for m in v.milestones:
            if self.holds(state, m.predicate):
                raise ResetError(f"variation {v.id}: milestone {m.name!r} already holds at t=0")
        look = self.catalog.make("LOOK")
        env = self.render_environment(state)
        return state, Transition(
            action=look,
            observation=env,
            env_text=env,
            inventory_text=self.render_inventory(state),
            score=0,
            reward=0,
            valid=True,
            location=state.agent_room,
        )

    # -- visibility ---------------------------------------------------------

    def _is_open(self, state: EnvState, name: str) -> bool:
        proto = self.world.protos[name]
        if not proto.has("container"):
            return False
        return not proto.has("openable") or "open" in state.states_of(name)

    def _contents(self, state: EnvState, container: str) -> list[str]:
        # containment dicts are never mutated in place, so identity is a safe cache key
        cached = self._children
        if cached is None or cached[0] is not state.containment:
            children: dict[str, list[str]] = {}
            for o in sorted(state.containment, key=self.world.object_order.__getitem__):
                children.setdefault(state.containment[o], []).append(o)
            cached = self._children = (state.containment, children)
        return list(cached[1].get(container, ()))

    def _walk(self, state: EnvState, roots: list[str]) -> Iterator[str]:
        for name in roots:
            yield name
            if self._is_open(state, name):
                yield from self._walk(state, self._contents(state, name))

    def visible(self, state: EnvState) -> list[str]:
        """Objects in the agent's room reachable through open containers."""
        return list(self._walk(state, self._contents(state, state.agent_room)))

    def held(self, state: EnvState) -> list[str]:
        return list(self._walk(state, list(state.inventory)))

    def accessible(self, state: EnvState) -> list[str]:
        return self.visible(state) + self.held(state)

    def room_of(self, state: EnvState, name: str) -> str:
        cur = name
        while cur in state.containment:
            cur = state.containment[cur]
        return state.agent_room if cur == AGENT else cur

    def inside(self, state: EnvState, obj: str, container: str) -> bool:
        cur = state.containment.get(obj)
        while cur is not None:
            if cur == container:
                return True
            cur = state.containment.get(cur)
        return False

    def _ancestors(self, state: EnvState, obj: str) -> Iterator[str]:
        cur = state.containment.get(obj)
        while cur is not None and self.world.is_object(cur):
            yield cur
            cur = state.containment.get(cur)

    # -- rendering ----------------------------------------------------------

    def _details(self, state: EnvState, name: str, base: str) -> list[str]:
        proto = self.world.protos[name]
        shown = sorted(s for s in state.states_of(name) if s != "liquid")
        container = state.containment[name]
        if container != base and container != AGENT and self.world.is_object(container):
            prep = "on" if self.world.protos[container].has("surface") else "in"
            shown.append(f"{prep} the {container}")
        if proto.has("liquid") and not shown:
            return []
        return shown

    def render_environment(self, state: EnvState) -> str:
        items = [text.item_phrase(n, self._details(state, n, state.agent_room)) for n in self.visible(state)]
        listing = "; ".join(items) if items else "nothing"
        exits = ", ".join(self.world.adjacency[state.agent_room])
        return f"This room is called the {state.agent_room}. In it, you see: {listing}. You can go to: {exits}."

    def render_inventory(self, state: EnvState) -> str:
        names = self.held(state)
        if not names:
            return "Your inventory is empty."
        items = [text.item_phrase(n, self._details(state, n, AGENT)) for n in names]
        return f"In your inventory, you see: {'; '.join(items)}."

    def _examine(self, state: EnvState, name: str) -> str:
        details = self._details(state, name, "")
        desc = f"This is {text.item_phrase(name, details)}."
        if self.world.protos[name].has("container"):
            if self._is_open(state, name):
                inner = self._contents(state, name)
                listed = ", ".join(f"{text.article(n)} {n}" for n in inner) or "nothing"
                desc += f" It holds: {listed}."
            else:
                desc += " It is closed."
        return desc

    # -- predicates ---------------------------------------------------------

    def holds(self, state: EnvState, pred: Mapping[str, Any]) -> bool:
        (kind, arg), = pred.items()
        if kind == "all":
            return all(self.holds(state, p) for p in arg)
        if kind == "inside":
            return self.inside(state, arg[0], arg[1])
        if kind == "inside_property":
            return any(self.world.protos[a].has(arg[1]) for a in self._ancestors(state, arg[0]))
        if kind == "inside_active":
            return any(
                self.world.protos[a].has(arg[1]) and self._running(state, a)
                for a in self._ancestors(state, arg[0])
            )
        if kind == "has_state":
            return arg[1] in state.states_of(arg[0])
        if kind == "holding":
            return arg in self.held(state)
        if kind == "holding_property":
            return any(self.world.protos[o].has(arg) for o in self.held(state))
        if kind == "measured":
            return f"measured:{arg}" in state.facts
        if kind == "focused":
            return f"focused:{arg}" in state.facts
        if kind == "in_room":
            return state.agent_room == arg
        raise SpecError(f"unknown predicate {kind!r}")

    def _running(self, state: EnvState, name: str) -> bool:
        s = state.states_of(name)
        return "activated" in s and "broken" not in s

    # -- applicability ------------------------------------------------------

    def resolve(self, state: EnvState, action: Action) -> Action:
        """Map references such as ``the water in metal pot`` to object names."""
        args = []
        changed = False
        for a in action.args:
            r = self._resolve_name(state, a)
            changed |= r != a
            args.append(r)
        if not changed:
            return action
        try:
            return self.catalog.make(action.template_id, args)
        except GrammarError:
            return action

    def _resolve_name(self, state: EnvState, name: str) -> str:
        w = self.world
        if w.is_object(name) or w.is_room(name):
            return name
        if name.startswith("the "):
            return self._resolve_name(state, name[4:])
        parts = name.split(" in ")
        for i in range(1, len(parts)):
            obj, cont = " in ".join(parts[:i]), " in ".join(parts[i:])
            obj = obj[4:] if obj.startswith("the ") else obj
            cont = cont[4:] if cont.startswith("the ") else cont
            if w.is_object(obj) and state.containment.get(obj) == cont:
                return obj
        return name

    def why_not(self, state: EnvState, action: Action, access: Collection[str] | None = None) -> str | None:
        """Return None if ``action`` is applicable, else a short reason.

        ``access`` may pass in a precomputed :meth:`accessible` list.
        """
        if state.terminated:
            return "episode over"
        tid, args = action.template_id, action.args
        if tid not in self.catalog:
            return "unknown template"
        if len(args) != self.catalog[tid].arity:
            return "wrong arity"
        w = self.world
        if tid in ("LOOK", "WAIT"):
            return None
        if tid == "TELEPORT":
            if not w.is_room(args[0]) or args[0] == state.agent_room:
                return "not another room"
            return None
        if tid == "GO":
            if args[0] not in w.adjacency[state.agent_room]:
                return "not adjacent"
            return None
        for a in args:
            if not w.is_object(a):
                return f"unknown object {a}"
        if access is None:
            access = self.accessible(state)
        for a in args:
            if a not in access:
                return f"{a} not here"
        p = w.protos[args[0]]
        s = state.states_of(args[0])
        if tid == "PICK":
            if not p.has("portable") or args[0] in state.inventory:
                return "cannot pick"
            return None
        if tid == "OPEN":
            return None if p.has("openable") and "closed" in s else "cannot open"
        if tid == "CLOSE":
            return None if p.has("openable") and "open" in s else "cannot close"
        if tid == "ACTIVATE":
            return None if p.has("device") and "activated" not in s else "cannot activate"
        if tid == "DEACTIVATE":
            return None if p.has("device") and "activated" in s else "cannot deactivate"
        if tid in ("EXAMINE", "FOCUS"):
            return None
        if args[0] == args[1]:
            return "same object"
        target = w.protos[args[1]]
        if tid in ("MOVE", "POUR"):
            if tid == "MOVE" and not p.has("portable"):
                return "not portable"
            if tid == "POUR" and not (p.has("liquid") and "liquid" in s):
                return "not pourable"
            if not target.has("container") or not self._is_open(state, args[1]):
                return "not an open container"
            if state.containment[args[0]] == args[1] or self.inside(state, args[1], args[0]):
                return "already there"
            return None
        if tid == "USE":
            if args[0] not in self.held(state):
                return "tool not held"
            if p.has("thermometer"):
                return None
            if p.has("waterer"):
                return None if target.has("container") else "cannot water"
            return "not a tool"
        return "unsupported"

    def is_valid(self, state: EnvState, action: Action) -> bool:
        return self.why_not(state, self.resolve(state, action)) is None

    def valid_actions(self, state: EnvState) -> frozenset[Action]:
        """Every action :meth:`step` would accept in ``state``."""
        if state.terminated:
            return frozenset()
        cat = self.catalog
        access = self.accessible(state)
        access_set = frozenset(access)
        rooms = self.world.room_names
        out: set[Action] = set()
        for t in cat:
            if t.arity == 0:
                cands: list[tuple[str, ...]] = [()]
            elif t.id in ("TELEPORT", "GO"):
                cands = [(r,) for r in rooms]
            elif t.arity == 1:
                cands = [(o,) for o in access]
            else:
                cands = [(a, b) for a in access for b in access]
            for args in cands:
                if self.why_not(state, Action(t.id, args), access_set) is None:
                    out.add(cat.make(t.id, args))
        return frozenset(out)

    # -- dynamics -----------------------------------------------------------

    def step(self, state: EnvState, action: Action) -> tuple[EnvState, Transition]:
        action = self.resolve(state, action)
        reason = self.why_not(state, action)
        if reason is not None:
            obs = text.EPISODE_OVER if state.terminated else text.NO_MATCH
            return state, self._transition(state, action, obs, 0, valid=False)
        new, obs = self._apply(state, action)
        ticks = WAIT_TICKS if action.template_id == "WAIT" else 1
        new = self._tick(new, ticks)
        new = replace(new, time=state.time + 1)
        new = self._score(new)
        return new, self._transition(new, action, obs, new.score - state.score, valid=True)

    def _transition(self, state: EnvState, action: Action, obs: str, reward: int, valid: bool) -> Transition:
        return Transition(
            action=action,
            observation=obs,
            env_text=self.render_environment(state),
            inventory_text=self.render_inventory(state),
            score=state.score,
            reward=reward,
            valid=valid,
            location=state.agent_room,
            terminal=state.terminated,
        )

    def _set_states(self, state: EnvState, name: str, add=(), remove=()) -> EnvState:
        states = dict(state.object_states)
        states[name] = (states.get(name, frozenset()) - frozenset(remove)) | frozenset(add)
        return replace(state, object_states=states)

    def _move(self, state: EnvState, name: str, container: str) -> EnvState:
        containment = dict(state.containment)
        containment[name] = container
        inventory = tuple(o for o in state.inventory if o != name)
        if container == AGENT:
            inventory += (name,)
        return replace(state, containment=containment, inventory=inventory)

    def _apply(self, state: EnvState, action: Action) -> tuple[EnvState, str]:
        tid, args = action.template_id, action.args
        if tid == "LOOK":
            return state, self.render_environment(state)
        if tid == "WAIT":
            return state, "You wait for a while."
        if tid in ("TELEPORT", "GO"):
            verb = "teleport" if tid == "TELEPORT" else "move"
            return replace(state, agent_room=args[0]), f"You {verb} to the {args[0]}."
        x = args[0]
        if tid == "PICK":
            return self._move(state, x, AGENT), f"You move the {x} to the inventory."
        if tid == "OPEN":
            return self._set_states(state, x, {"open"}, {"closed"}), f"The {x} is now open."
        if tid == "CLOSE":
            return self._set_states(state, x, {"closed"}, {"open"}), f"The {x} is now closed."
        if tid == "ACTIVATE":
            if "broken" in state.states_of(x):
                return state, f"The {x} cannot be activated because it is broken."
            return self._set_states(state, x, {"activated"}, {"deactivated"}), f"The {x} is now activated."
        if tid == "DEACTIVATE":
            return self._set_states(state, x, {"deactivated"}, {"activated"}), f"The {x} is now deactivated."
        if tid == "EXAMINE":
            return state, self._examine(state, x)
        if tid == "FOCUS":
            return replace(state, facts=state.facts | {f"focused:{x}"}), f"You focus on the {x}."
        y = args[1]
        if tid == "MOVE":
            return self._move(state, x, y), f"You move the {x} to the {y}."
        if tid == "POUR":
            return self._move(state, x, y), f"You pour the {x} into the {y}."
        if tid == "USE":
            tool = self.world.protos[x]
            if tool.has("thermometer"):
                if "broken" in state.states_of(x):
                    return state, f"The {x} cannot take a reading because it is broken."
                temp = state.temperatures[y]
                return replace(state, facts=state.facts | {f"measured:{y}"}), f"The temperature is {temp}F."
            return self._set_states(state, y, {"watered"}), f"You water the {y}."
        raise AssertionError(tid)

    def _tick(self, state: EnvState, ticks: int) -> EnvState:
        w = self.world
        sources = [o.name for o in w.objects if o.has("heat_source") and self._running(state, o.name)]
        seeds = [o.name for o in w.objects if o.has("seed")]
        liquids = [o.name for o in w.objects if o.boiling_point is not None]
        if not sources and not seeds:
            return state
        temps = dict(state.temperatures)
        counters = dict(state.counters)
        heated = [o for src in sources for o in state.containment if self.inside(state, o, src)]
        growing = []
        for s in seeds:
            pot = state.containment.get(s)
            if pot is None or not w.is_object(pot) or "sprouted" in state.states_of(s):
                continue
            if "watered" in state.states_of(pot) and any(
                w.protos[o].has("soil") for o in self._contents(state, pot)
            ):
                growing.append(s)
        for _ in range(ticks):
            for o in heated:
                temps[o] = min(MAX_TEMPERATURE, temps[o] + HEAT_PER_TICK)
            for s in growing:
                counters[s] = counters.get(s, 0) + 1
        new = replace(state, temperatures=temps, counters=counters)
        for o in liquids:
            bp = w.protos[o].boiling_point
            if "liquid" in new.states_of(o) and temps[o] >= bp:
                new = self._set_states(new, o, {"gas"}, {"liquid"})
        for s in growing:
            if counters[s] >= SPROUT_TICKS:
                new = self._set_states(new, s, {"sprouted"})
        return new

    def _score(self, state: EnvState) -> EnvState:
        score = state.score
        achieved = list(state.achieved)
        for i, m in enumerate(self.variation.milestones):
            if i not in achieved and self.holds(state, m.predicate):
                achieved.append(i)
                score += m.points
        terminated = state.terminated
        for v in self.variation.violations:
            if self.holds(state, v.predicate):
                terminated = True
                score += v.penalty
                break
        return replace(state, score=score, achieved=tuple(achieved), terminated=terminated)
