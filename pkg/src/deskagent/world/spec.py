"""Declarative world and task-family documents.

Both are YAML with a ``schema_version`` field. A world lists rooms,
object prototypes and action templates; a task family describes how to
stamp out :class:`TaskVariation` objects from slot pools and a seed.
"""
from __future__ import annotations

import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..grammar import Catalog, GrammarError, TemplateDef

SCHEMA_VERSION = 1

KNOWN_PROPERTIES = frozenset(
    {
        "portable",
        "container",
        "surface",
        "openable",
        "device",
        "heat_source",
        "liquid",
        "thermometer",
        "waterer",
        "seed",
        "soil",
    }
)
KNOWN_STATES = frozenset(
    {"open", "closed", "activated", "deactivated", "broken", "liquid", "gas", "watered", "sprouted"}
)
ENGINE_TEMPLATES = frozenset(
    {"LOOK", "TELEPORT", "GO", "PICK", "OPEN", "CLOSE", "ACTIVATE", "DEACTIVATE",
     "EXAMINE", "MOVE", "POUR", "USE", "FOCUS", "WAIT"}
)
PREDICATES = frozenset(
    {"all", "inside", "inside_property", "inside_active", "has_state", "holding",
     "holding_property", "measured", "focused", "in_room"}
)
EXCEPTION_KINDS = frozenset({"disabled-device", "missing-object"})
AGENT = "agent"


class SpecError(ValueError):
    """A world or task document failed validation; the message names the field."""


@dataclass(frozen=True)
class RoomDef:
    name: str
    connections: tuple[str, ...]


@dataclass(frozen=True)
class ObjectProto:
    name: str
    properties: frozenset[str]
    states: frozenset[str]
    container: str
    temperature: int
    boiling_point: int | None = None

    def has(self, prop: str) -> bool:
        return prop in self.properties


@dataclass(frozen=True)
class WorldSpec:
    name: str
    start_room: str
    rooms: tuple[RoomDef, ...]
    objects: tuple[ObjectProto, ...]
    templates: tuple[TemplateDef, ...]
    default_temperature: int = 70
    schema_version: int = SCHEMA_VERSION

    @cached_property
    def catalog(self) -> Catalog:
        return Catalog(self.templates)

    @cached_property
    def room_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.rooms)

    @cached_property
    def adjacency(self) -> dict[str, tuple[str, ...]]:
        return {r.name: r.connections for r in self.rooms}

    @cached_property
    def protos(self) -> dict[str, ObjectProto]:
        return {o.name: o for o in self.objects}

    @cached_property
    def object_order(self) -> dict[str, int]:
        return {o.name: i for i, o in enumerate(self.objects)}

    def is_room(self, name: str) -> bool:
        return name in self.adjacency

    def is_object(self, name: str) -> bool:
        return name in self.protos


@dataclass(frozen=True)
class Milestone:
    name: str
    points: int
    predicate: Mapping[str, Any]


@dataclass(frozen=True)
class Violation:
    name: str
    predicate: Mapping[str, Any]
    penalty: int = 0


@dataclass(frozen=True)
class Placement:
    object: str
    container: str | None = None
    states: tuple[str, ...] | None = None
    temperature: int | None = None


@dataclass(frozen=True)
class ExceptionSpec:
    kind: str
    target: str
    alternative: str
    relocate_to: str | None = None


@dataclass(frozen=True)
class TaskVariation:
    id: str
    family: str
    split: str
    index: int
    task_description: str
    milestones: tuple[Milestone, ...]
    initial_state_overrides: tuple[Placement, ...] = ()
    exceptions: tuple[ExceptionSpec, ...] = ()
    violations: tuple[Violation, ...] = ()
    bindings: Mapping[str, str] = field(default_factory=dict)
    seed: int = 0

    def exception(self, kind: str) -> ExceptionSpec | None:
        for e in self.exceptions:
            if e.kind == kind:
                return e
        return None


# -- helpers -----------------------------------------------------------------

def _read_document(doc: Any) -> Mapping[str, Any]:
    if isinstance(doc, Mapping):
        return doc
    if isinstance(doc, Path) or (isinstance(doc, str) and "\n" not in doc and doc.endswith((".yaml", ".yml"))):
        try:
            doc = Path(doc).read_text(encoding="utf-8")
        except OSError as exc:
            raise SpecError(f"cannot read spec document {doc}: {exc}") from exc
    try:
        data = yaml.safe_load(doc)
    except yaml.YAMLError as exc:
        raise SpecError(f"spec document is not valid YAML: {exc}") from exc
    if not isinstance(data, Mapping):
        raise SpecError("spec document must be a mapping at top level")
    return data


def _require(data: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in data:
        raise SpecError(f"{where}: missing required field '{key}'")
    return data[key]


def _check_version(data: Mapping[str, Any]) -> None:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SpecError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")


def bundled_path(filename: str) -> Path:
    return Path(str(resources.files("deskagent.world") / "data" / filename))


# -- world -------------------------------------------------------------------

def load_world(document: Any) -> WorldSpec:
    """Parse and validate a world document (path, YAML text or mapping)."""
    data = _read_document(document)
    _check_version(data)
    name = str(data.get("name", "world"))

    raw_templates = data.get("action_templates")
    if raw_templates is None:
        templates = bundled_world().templates
    else:
        tlist = []
        for i, t in enumerate(raw_templates):
            where = f"action_templates[{i}]"
            try:
                td = TemplateDef(
                    id=str(_require(t, "id", where)),
                    arity=int(_require(t, "arity", where)),
                    pattern=str(_require(t, "pattern", where)),
                    remark=str(t.get("remark", "")),
                    example=str(t.get("example", "")),
                )
            except GrammarError as exc:
                raise SpecError(f"{where}: {exc}") from exc
            if td.id not in ENGINE_TEMPLATES:
                raise SpecError(f"{where}.id: engine has no rule for template {td.id!r}")
            tlist.append(td)
        templates = tuple(tlist)
    try:
        catalog = Catalog(templates)
    except GrammarError as exc:
        raise SpecError(f"action_templates: {exc}") from exc

    def check_name(value: str, where: str) -> None:
        try:
            catalog.check_name(value)
        except GrammarError as exc:
            raise SpecError(f"{where}: {exc}") from exc

    raw_rooms = _require(data, "rooms", "world")
    if not raw_rooms:
        raise SpecError("rooms: at least one room is required")
    room_names: list[str] = []
    for i, r in enumerate(raw_rooms):
        rname = str(_require(r, "name", f"rooms[{i}]"))
        check_name(rname, f"rooms[{i}].name")
        if rname in room_names:
            raise SpecError(f"rooms[{i}].name: duplicate room {rname!r}")
        room_names.append(rname)
    edges: dict[str, set[str]] = {r: set() for r in room_names}
    for i, r in enumerate(raw_rooms):
        for other in r.get("connections", []) or []:
            if other not in edges:
                raise SpecError(f"rooms[{i}].connections: unknown room {other!r}")
            if other == r["name"]:
                raise SpecError(f"rooms[{i}].connections: room connects to itself")
            edges[r["name"]].add(other)
            edges[other].add(r["name"])
    seen = {room_names[0]}
    queue = deque([room_names[0]])
    while queue:
        for nxt in edges[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if len(seen) != len(room_names):
        missing = sorted(set(room_names) - seen)
        raise SpecError(f"rooms.connections: room graph is not connected; unreachable {missing}")
    rooms = tuple(
        RoomDef(n, tuple(sorted(edges[n], key=room_names.index))) for n in room_names
    )

    default_temp = int(data.get("default_temperature", 70))
    protos: list[ObjectProto] = []
    names = set(room_names)
    for i, o in enumerate(_require(data, "objects", "world") or []):
        where = f"objects[{i}]"
        oname = str(_require(o, "name", where))
        check_name(oname, f"{where}.name")
        if oname in names or oname == AGENT:
            raise SpecError(f"{where}.name: duplicate name {oname!r}")
        names.add(oname)
        props = frozenset(o.get("properties", []) or [])
        unknown = props - KNOWN_PROPERTIES
        if unknown:
            raise SpecError(f"{where}.properties: unknown {sorted(unknown)}")
        states = frozenset(o.get("states", []) or [])
        bad = states - KNOWN_STATES
        if bad:
            raise SpecError(f"{where}.states: unknown {sorted(bad)}")
        bp = o.get("boiling_point")
        protos.append(
            ObjectProto(
                name=oname,
                properties=props,
                states=states,
                container=str(_require(o, "container", where)),
                temperature=int(o.get("temperature", default_temp)),
                boiling_point=None if bp is None else int(bp),
            )
        )
    by_name = {p.name: p for p in protos}
    for i, p in enumerate(protos):
        where = f"objects[{i}].container"
        if p.container in by_name:
            if not by_name[p.container].has("container"):
                raise SpecError(f"{where}: {p.container!r} is not a container")
        elif p.container not in edges:
            raise SpecError(f"{where}: unknown room or object {p.container!r}")
    for p in protos:
        chain, cur = {p.name}, p.container
        while cur in by_name:
            if cur in chain:
                raise SpecError(f"objects: containment cycle through {p.name!r}")
            chain.add(cur)
            cur = by_name[cur].container

    start = str(data.get("start_room", room_names[0]))
    if start not in edges:
        raise SpecError(f"start_room: unknown room {start!r}")
    return WorldSpec(
        name=name,
        start_room=start,
        rooms=rooms,
        objects=tuple(protos),
        templates=templates,
        default_temperature=default_temp,
    )


_BUNDLED: dict[str, WorldSpec] = {}


def bundled_world() -> WorldSpec:
    if "world" not in _BUNDLED:
        _BUNDLED["world"] = load_world(bundled_path("desk_world.yaml"))
    return _BUNDLED["world"]


# -- task families -------------------------------------------------------------

def _fill(value: Any, bindings: Mapping[str, str]) -> Any:
    if isinstance(value, str):
        return value.format(**bindings)
    if isinstance(value, list):
        return [_fill(v, bindings) for v in value]
    if isinstance(value, Mapping):
        return {k: _fill(v, bindings) for k, v in value.items()}
    return value


def _predicate_names(pred: Mapping[str, Any], where: str) -> list[str]:
    if not isinstance(pred, Mapping) or len(pred) != 1:
        raise SpecError(f"{where}: predicate must be a single-key mapping")
    (kind, arg), = pred.items()
    if kind not in PREDICATES:
        raise SpecError(f"{where}: unknown predicate {kind!r}")
    if kind == "all":
        out: list[str] = []
        for j, sub in enumerate(arg):
            out.extend(_predicate_names(sub, f"{where}.all[{j}]"))
        return out
    if kind in ("inside_property", "inside_active", "has_state"):
        return [arg[0]]
    if kind == "holding_property":
        return []
    return list(arg) if isinstance(arg, list) else [arg]


@dataclass(frozen=True)
class TaskFamily:
    """A task template plus slot pools; :meth:`variations` is deterministic."""

    id: str
    description: str
    slots: Mapping[str, Mapping[str, tuple[str, ...]]]
    derived: Mapping[str, Mapping[str, Any]]
    overrides: tuple[Mapping[str, Any], ...]
    milestones: tuple[Mapping[str, Any], ...]
    violations: tuple[Mapping[str, Any], ...]
    splits: Mapping[str, Mapping[str, int]]
    exceptions: tuple[Mapping[str, Any], ...]
    world: WorldSpec

    def _derive(self, bindings: dict[str, str]) -> dict[str, str]:
        out = dict(bindings)
        for key, rule in self.derived.items():
            if "threshold" in rule:
                r = rule["threshold"]
                out[key] = r["then"] if float(out[r["slot"]]) > float(r["above"]) else r["else"]
            elif "room_of" in rule:
                cur = out[rule["room_of"]]
                while self.world.is_object(cur):
                    cur = self.world.protos[cur].container
                out[key] = cur
            elif "lookup" in rule:
                r = rule["lookup"]
                try:
                    out[key] = str(r["values"][out[r["slot"]]])
                except KeyError:
                    raise SpecError(f"derived.{key}: no lookup entry for {out.get(r['slot'])!r}") from None
            else:
                raise SpecError(f"derived.{key}: unknown rule {sorted(rule)}")
        return out

    def variations(self, split: str) -> list[TaskVariation]:
        if split not in self.splits:
            raise SpecError(f"family {self.id}: unknown split {split!r}")
        conf = self.splits[split]
        keys = list(self.slots)
        pools = [self.slots[k].get(split) or self.slots[k]["all"] for k in keys]
        combos = list(itertools.product(*pools))
        count, seed = int(conf["count"]), int(conf["seed"])
        if count > len(combos):
            raise SpecError(
                f"family {self.id}: split {split} asks for {count} variations "
                f"but slots only allow {len(combos)}"
            )
        random.Random(seed).shuffle(combos)
        out = []
        for index, combo in enumerate(combos[:count]):
            bindings = self._derive(dict(zip(keys, combo)))
            excs = tuple(
                ExceptionSpec(
                    kind=e["kind"],
                    target=_fill(e["target"], bindings),
                    alternative=_fill(e.get("alternative", ""), bindings),
                    relocate_to=_fill(e.get("relocate_to"), bindings),
                )
                for e in self.exceptions
                if e["split"] == split and int(e["index"]) == index
            )
            variation = TaskVariation(
                id=f"{self.id}-{split}-{index}",
                family=self.id,
                split=split,
                index=index,
                task_description=_fill(self.description, bindings),
                milestones=tuple(
                    Milestone(
                        name=_fill(m.get("name", f"milestone {j}"), bindings),
                        points=int(m["points"]),
                        predicate=_fill(m["when"], bindings),
                    )
                    for j, m in enumerate(self.milestones)
                ),
                initial_state_overrides=tuple(
                    Placement(
                        object=_fill(o["object"], bindings),
                        container=_fill(o.get("container"), bindings),
                        states=tuple(_fill(o["states"], bindings)) if "states" in o else None,
                        temperature=int(_fill(str(o["temperature"]), bindings)) if "temperature" in o else None,
                    )
                    for o in self.overrides
                ),
                exceptions=excs,
                violations=tuple(
                    Violation(
                        name=_fill(v.get("name", f"violation {j}"), bindings),
                        predicate=_fill(v["when"], bindings),
                        penalty=int(v.get("penalty", 0)),
                    )
                    for j, v in enumerate(self.violations)
                ),
                bindings=bindings,
                seed=seed * 1000 + index,
            )
            validate_variation(self.world, variation)
            out.append(variation)
        return out


def validate_variation(world: WorldSpec, v: TaskVariation) -> None:
    """Check a variation against the world; raises :class:`SpecError`."""
    where = f"variation {v.id}"
    if not v.milestones:
        raise SpecError(f"{where}.milestones: at least one milestone is required")
    for m in v.milestones:
        if m.points <= 0:
            raise SpecError(f"{where}.milestones[{m.name}]: points must be positive")
    total = sum(m.points for m in v.milestones)
    if total != 100:
        raise SpecError(f"{where}.milestones: points sum to {total}, expected 100")
    for vi in v.violations:
        if vi.penalty > 0:
            raise SpecError(f"{where}.violations[{vi.name}]: penalty must be <= 0")
    names = []
    for m in v.milestones:
        names += _predicate_names(m.predicate, f"{where}.milestones[{m.name}]")
    for vi in v.violations:
        names += _predicate_names(vi.predicate, f"{where}.violations[{vi.name}]")
    for p in v.initial_state_overrides:
        names.append(p.object)
        if p.container is not None:
            names.append(p.container)
    for e in v.exceptions:
        if e.kind not in EXCEPTION_KINDS:
            raise SpecError(f"{where}.exceptions: unknown kind {e.kind!r}")
        names.append(e.target)
        if e.relocate_to:
            names.append(e.relocate_to)
    for n in names:
        if not (world.is_object(n) or world.is_room(n)):
            raise SpecError(f"{where}: unknown object or room {n!r}")


def load_task_family(document: Any, world: WorldSpec | None = None) -> TaskFamily:
    data = _read_document(document)
    _check_version(data)
    world = world or bundled_world()
    fid = str(_require(data, "family", "task family"))
    slots: dict[str, dict[str, tuple[str, ...]]] = {}
    for key, pool in (_require(data, "slots", fid) or {}).items():
        if isinstance(pool, list):
            slots[key] = {"all": tuple(str(x) for x in pool)}
        else:
            slots[key] = {k: tuple(str(x) for x in v) for k, v in pool.items()}
    splits = {k: dict(v) for k, v in (_require(data, "splits", fid) or {}).items()}
    return TaskFamily(
        id=fid,
        description=str(_require(data, "description", fid)),
        slots=slots,
        derived=dict(data.get("derived", {}) or {}),
        overrides=tuple(data.get("overrides", []) or []),
        milestones=tuple(_require(data, "milestones", fid)),
        violations=tuple(data.get("violations", []) or []),
        splits=splits,
        exceptions=tuple(data.get("exceptions", []) or []),
        world=world,
    )


BUNDLED_FAMILIES = ("boil", "plant", "thermometer")


def bundled_families(world: WorldSpec | None = None) -> list[TaskFamily]:
    return [load_task_family(bundled_path(f"{f}.yaml"), world) for f in BUNDLED_FAMILIES]


def bundled_variations(split: str | None = None, world: WorldSpec | None = None) -> list[TaskVariation]:
    out: list[TaskVariation] = []
    for fam in bundled_families(world):
        for s in ([split] if split else list(fam.splits)):
            out.extend(fam.variations(s))
    return out
