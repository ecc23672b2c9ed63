"""Fast policies: nearest-context retrieval and an external-process adapter."""
from __future__ import annotations

import difflib
import hashlib
import json
import re
import subprocess
import threading
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..grammar import Action, Catalog, GrammarError
from ..world import bundled_world
from ..world.text import parse_exits, parse_object_names, parse_room_name
from .context import SwiftContext, parse_context
from .dataset import ImitationExample
from .validation import check_contexts, check_targets

_WORD = re.compile(r"[a-z0-9]+")


class PredictionError(RuntimeError):
    pass


class FastPolicy(Protocol):
    def predict_action(self, context_text: str) -> Action: ...


def _tokens(text: str) -> frozenset[str]:
    return frozenset(_WORD.findall(text.lower()))


def _jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def _features(ctx: SwiftContext) -> dict[str, frozenset[str]]:
    last_action, _, last_obs = ctx.window[-1] if ctx.window else ("", 0, "")
    history = " ".join(f"{a} {o}" for a, _, o in ctx.window)
    return {
        "task": _tokens(ctx.task_description),
        "last_action": _tokens(last_action),
        "last_observation": _tokens(last_obs),
        "history": _tokens(history),
        "room": _tokens(ctx.current_room_text),
        "inventory": _tokens(ctx.inventory_text),
        "visited": frozenset(ctx.visited_rooms),
        "time": frozenset({str(ctx.time)}),
        "score": frozenset({str(ctx.score)}),
    }


def _substitutions(stored_task: str, query_task: str) -> list[tuple[str, str]]:
    """Phrase replacements that turn the stored task text into the query's."""
    a, b = _WORD.findall(stored_task.lower()), _WORD.findall(query_task.lower())
    subs: list[tuple[str, str]] = []
    for op, i1, i2, j1, j2 in difflib.SequenceMatcher(a=a, b=b, autojunk=False).get_opcodes():
        if op == "replace":
            pair = (" ".join(a[i1:i2]), " ".join(b[j1:j2]))
            if pair[0] not in (s for s, _ in subs):
                subs.append(pair)
    # longest first so "orange juice" wins over "orange"
    return sorted(subs, key=lambda p: -len(p[0]))


def _apply_substitutions(arg: str, subs: list[tuple[str, str]]) -> str:
    for old, new in subs:
        rx = re.compile(rf"(?<![a-z0-9]){re.escape(old)}(?![a-z0-9])")
        if rx.search(arg):
            return rx.sub(new, arg)
    return arg


class RetrievalPolicy(BaseEstimator):
    """Nearest-context behaviour cloning.

    ``fit`` stores (context, action) pairs; ``predict`` returns the action
    of the most similar stored context, where similarity is a weighted sum
    of per-field token Jaccard scores. Exact context matches short-circuit
    to their recorded action. Otherwise, with ``remap_arguments`` on, the
    retrieved action's arguments are rewritten for the query: phrases that
    differ between the two task descriptions are swapped, and any argument
    still absent from the query's room, inventory or known rooms is rebound
    to the present name with the largest word overlap.

    Ties go to the lowest example id.
    """

    def __init__(
        self,
        task_weight: float = 3.0,
        last_action_weight: float = 3.0,
        last_observation_weight: float = 3.0,
        history_weight: float = 1.0,
        room_weight: float = 1.0,
        inventory_weight: float = 1.5,
        visited_weight: float = 1.0,
        time_weight: float = 0.5,
        score_weight: float = 1.0,
        remap_arguments: bool = True,
        catalog: Catalog | None = None,
    ):
        self.task_weight = task_weight
        self.last_action_weight = last_action_weight
        self.last_observation_weight = last_observation_weight
        self.history_weight = history_weight
        self.room_weight = room_weight
        self.inventory_weight = inventory_weight
        self.visited_weight = visited_weight
        self.time_weight = time_weight
        self.score_weight = score_weight
        self.remap_arguments = remap_arguments
        self.catalog = catalog

    def _weights(self) -> dict[str, float]:
        return {
            "task": self.task_weight,
            "last_action": self.last_action_weight,
            "last_observation": self.last_observation_weight,
            "history": self.history_weight,
            "room": self.room_weight,
            "inventory": self.inventory_weight,
            "visited": self.visited_weight,
            "time": self.time_weight,
            "score": self.score_weight,
        }

    def _catalog(self) -> Catalog:
        return self.catalog if self.catalog is not None else bundled_world().catalog

    def fit(self, X: Sequence[str], y: Sequence[str], sample_weight=None, groups=None, ids=None):
        X = check_contexts(X)
        y = check_targets(y, len(X), self._catalog())
        n = len(X)
        weights = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if weights.shape != (n,) or np.any(weights <= 0):
            raise ValueError("sample_weight must be positive with one entry per context")
        self.contexts_ = list(X)
        self.targets_ = list(y)
        self.weights_ = weights
        self.groups_ = list(groups) if groups is not None else [""] * n
        self.ids_ = list(ids) if ids is not None else list(range(n))
        self.parsed_ = [parse_context(x) for x in X]
        self.features_ = [_features(c) for c in self.parsed_]
        self.exact_: dict[str, int] = {}
        for i, x in enumerate(X):
            self.exact_.setdefault(x, i)
        rooms: list[str] = []
        for c in self.parsed_:
            for r in list(c.visited_rooms) + parse_exits(c.current_room_text):
                if r not in rooms:
                    rooms.append(r)
        self.rooms_ = rooms
        digest = hashlib.sha256()
        params = {k: v for k, v in self.get_params(deep=False).items() if k != "catalog"}
        digest.update(json.dumps(params, sort_keys=True).encode())
        for x, t, w in zip(X, y, weights):
            digest.update(f"{x}\x1f{t}\x1f{w!r}\x1e".encode())
        self.fingerprint_ = digest.hexdigest()
        self.n_examples_ = n
        return self

    def fit_examples(self, examples: Sequence[ImitationExample]) -> "RetrievalPolicy":
        return self.fit(
            [e.context_text for e in examples],
            [e.target for e in examples],
            sample_weight=[e.weight for e in examples],
            groups=[e.task_family for e in examples],
            ids=[e.id for e in examples],
        )

    # -- retrieval ----------------------------------------------------------

    def _scores(self, ctx: SwiftContext) -> np.ndarray:
        feats = _features(ctx)
        weights = self._weights()
        total = sum(weights.values())
        out = np.empty(len(self.features_))
        for i, f in enumerate(self.features_):
            s = sum(w * _jaccard(feats[k], f[k]) for k, w in weights.items() if w)
            out[i] = s / total * self.weights_[i]
        return out

    def nearest(self, context_text: str) -> tuple[int, float]:
        """Index of the retrieved example and its similarity (1.0 = exact)."""
        check_is_fitted(self, "fingerprint_")
        hit = self.exact_.get(context_text)
        if hit is not None:
            return hit, 1.0
        scores = self._scores(parse_context(context_text))
        best = int(np.argmax(scores))  # first maximum -> lowest example id
        return best, float(scores[best])

    def predict_action(self, context_text: str) -> Action:
        idx, score = self.nearest(context_text)
        target = self.targets_[idx]
        catalog = self._catalog()
        try:
            action = catalog.parse_surface(target)
        except GrammarError as exc:
            raise PredictionError(str(exc)) from exc
        if score == 1.0 and context_text in self.exact_ or not self.remap_arguments:
            return action
        query = parse_context(context_text)
        return self._remap(action, self.parsed_[idx], query, catalog)

    def _remap(self, action: Action, stored: SwiftContext, query: SwiftContext, catalog: Catalog) -> Action:
        subs = _substitutions(stored.task_description, query.task_description)
        objects = parse_object_names(query.current_room_text) + parse_object_names(query.inventory_text)
        rooms = list(dict.fromkeys(self.rooms_ + list(query.visited_rooms) + parse_exits(query.current_room_text)))
        here = parse_room_name(query.current_room_text)
        args = []
        for arg in action.args:
            arg = _apply_substitutions(arg, subs)
            pool = rooms if action.template_id in ("TELEPORT", "GO") else objects
            if arg not in pool:
                arg = self._rebind(arg, pool, exclude=here) or arg
            args.append(arg)
        try:
            return catalog.make(action.template_id, args)
        except GrammarError as exc:
            raise PredictionError(f"cannot rebuild {action.template_id}{tuple(args)}: {exc}") from exc

    @staticmethod
    def _rebind(arg: str, pool: list[str], exclude: str | None = None) -> str | None:
        words = _tokens(arg)
        best, best_score = None, 0.0
        for cand in pool:
            if cand == exclude:
                continue
            s = _jaccard(words, _tokens(cand))
            if s > best_score:
                best, best_score = cand, s
        return best

    def predict(self, X: Sequence[str]) -> np.ndarray:
        X = check_contexts(X)
        return np.array([self.predict_action(x).surface for x in X], dtype=object)

    def score(self, X: Sequence[str], y: Sequence[str]) -> float:
        """Exact-match accuracy of predicted surfaces."""
        pred = self.predict(X)
        return float(np.mean([p == t for p, t in zip(pred, y)]))

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "fingerprint_")
        params = {k: v for k, v in self.get_params(deep=False).items() if k != "catalog"}
        payload = {
            "kind": "retrieval-policy",
            "params": params,
            "fingerprint": self.fingerprint_,
            "examples": [
                {"id": i, "context": x, "target": t, "weight": float(w), "family": g}
                for i, x, t, w, g in zip(self.ids_, self.contexts_, self.targets_, self.weights_, self.groups_)
            ],
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, catalog: Catalog | None = None) -> "RetrievalPolicy":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("kind") != "retrieval-policy":
            raise ValueError(f"{path} is not a saved retrieval policy")
        ex = payload["examples"]
        policy = cls(**payload["params"], catalog=catalog).fit(
            [e["context"] for e in ex],
            [e["target"] for e in ex],
            sample_weight=[e["weight"] for e in ex],
            groups=[e["family"] for e in ex],
            ids=[e["id"] for e in ex],
        )
        if policy.fingerprint_ != payload["fingerprint"]:
            raise ValueError(f"{path}: fingerprint mismatch after reload")
        return policy


class SubprocessPolicy:
    """Adapter for an external model speaking a line protocol.

    One serialized context is written per line to the child's stdin and
    one action surface string is read back. Contexts never contain
    newlines, so no framing beyond ``\\n`` is needed.
    """

    def __init__(self, command: Sequence[str], catalog: Catalog | None = None, timeout: float = 30.0):
        self.command = list(command)
        self.catalog = catalog or bundled_world().catalog
        self.timeout = timeout
        self._proc: subprocess.Popen[str] | None = None
        self._lock = threading.Lock()

    def _process(self) -> subprocess.Popen[str]:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        return self._proc

    def predict_action(self, context_text: str) -> Action:
        if "\n" in context_text:
            raise ValueError("context text must be a single line")
        with self._lock:
            proc = self._process()
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(context_text + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        if not line:
            raise PredictionError(f"external policy {self.command[0]!r} closed its output")
        try:
            return self.catalog.parse_surface(line.strip())
        except GrammarError as exc:
            raise PredictionError(str(exc)) from exc

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None

    def __enter__(self) -> "SubprocessPolicy":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
