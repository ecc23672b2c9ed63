"""Benchmark runner, metrics, and trajectory/plot export."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from .controller import EpisodeResult, SwitchConfig, run_episode, run_llm_every_step, run_oracle
from .fast import BalanceConfig, RetrievalPolicy, build_dataset
from .llm import Backend, LLMClient, StubScript, fork_backend, make_backend
from .oracle import solve
from .planner import PlannerConfig
from .simulated import OracleLLM
from .world import Transition, TaskVariation, WorldSpec, bundled_world, load_task_family, load_world
from .world.spec import BUNDLED_FAMILIES, bundled_path

log = logging.getLogger(__name__)

STRATEGIES = ("swiftsage", "swift-only", "llm-every-step", "oracle")
TRAJECTORY_SCHEMA = "deskagent.trajectory/1"
REPORT_SCHEMA = "deskagent.metrics/1"
GROUPS = (("Short", 0.0, 20.0), ("Medium", 20.0, 50.0), ("Long", 50.0, float("inf")))


class ConfigError(ValueError):
    pass


def length_group(oracle_len: float) -> str:
    """Short (0, 20], Medium (20, 50], Long (50, inf)."""
    for name, lo, hi in GROUPS:
        if lo < oracle_len <= hi:
            return name
    raise ValueError(f"oracle length must be positive, got {oracle_len}")


# -- configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    strategy: str = "swiftsage"
    families: tuple[str, ...] = BUNDLED_FAMILIES
    split: str = "test"
    per_family: int = 10
    seeds: tuple[int, ...] = (0,)
    backend: Mapping[str, Any] = field(default_factory=lambda: {"kind": "oracle"})
    policy_path: str | None = None
    world_path: str | None = None
    family_paths: Mapping[str, str] = field(default_factory=dict)
    train_split: str = "train"
    balance: BalanceConfig = BalanceConfig()
    switch: SwitchConfig = SwitchConfig()
    parallelism: int = 1

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "BenchmarkConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "switch" in data:
            sw = dict(data["switch"])
            if "planner" in sw:
                sw["planner"] = PlannerConfig(**sw["planner"])
            if "critical_templates" in sw:
                sw["critical_templates"] = frozenset(sw["critical_templates"])
            if "exception_phrases" in sw:
                sw["exception_phrases"] = tuple(sw["exception_phrases"])
            data["switch"] = SwitchConfig(**sw)
        if "balance" in data:
            data["balance"] = BalanceConfig(**data["balance"])
        for key in ("families", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkConfig":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_mapping(data)

    def problems(self) -> list[str]:
        out = []
        if self.strategy not in STRATEGIES:
            out.append(f"strategy {self.strategy!r} is not one of {', '.join(STRATEGIES)}")
        if self.per_family < 1:
            out.append("per_family must be >= 1")
        if not self.seeds:
            out.append("at least one seed is required")
        if not self.families:
            out.append("at least one task family is required")
        if self.parallelism < 1:
            out.append("parallelism must be >= 1")
        kind = dict(self.backend).get("kind")
        if self.strategy in ("swiftsage", "llm-every-step") and kind not in ("oracle", "stub", "http"):
            out.append(f"strategy {self.strategy} needs an llm backend (oracle, stub or http), got {kind!r}")
        if kind == "stub" and "script" not in self.backend:
            out.append("stub backend needs 'script' (path to a stub YAML)")
        if kind == "http" and not all(self.backend.get(k) for k in ("base_url", "model")):
            out.append("http backend needs 'base_url' and 'model'")
        if self.policy_path and not Path(self.policy_path).is_file():
            out.append(f"policy file {self.policy_path} does not exist")
        return out

    def validated(self) -> "BenchmarkConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid benchmark config:\n  - " + "\n  - ".join(problems))
        return self


# -- suite ------------------------------------------------------------------------------

@dataclass
class Suite:
    world: WorldSpec
    variations: list[TaskVariation]
    training: list[TaskVariation]

    @property
    def all_variations(self) -> list[TaskVariation]:
        return self.training + self.variations


def load_suite(config: BenchmarkConfig) -> Suite:
    world = load_world(config.world_path) if config.world_path else bundled_world()
    selected, training = [], []
    for fam_id in config.families:
        path = config.family_paths.get(fam_id) or bundled_path(f"{fam_id}.yaml")
        if not Path(path).is_file():
            raise ConfigError(f"no task family file for {fam_id!r} at {path}")
        family = load_task_family(path, world)
        if config.split not in family.splits:
            raise ConfigError(f"family {fam_id!r} has no split {config.split!r} (has: {', '.join(family.splits)})")
        selected += family.variations(config.split)[: config.per_family]
        if config.train_split in family.splits and config.train_split != config.split:
            training += family.variations(config.train_split)
    return Suite(world, selected, training)


def train_policy(suite: Suite, balance: BalanceConfig = BalanceConfig()) -> RetrievalPolicy:
    if not suite.training:
        raise ConfigError("no training variations available to fit the fast policy")
    trajectories = [solve(suite.world, v) for v in suite.training]
    examples = build_dataset(trajectories, balance, suite.world.catalog)
    return RetrievalPolicy(catalog=suite.world.catalog).fit_examples(examples)


def build_backend(config: BenchmarkConfig, suite: Suite) -> Backend | None:
    spec = dict(config.backend)
    kind = spec.get("kind")
    if config.strategy in ("swift-only", "oracle"):
        return None
    if kind == "oracle":
        return OracleLLM(suite.world, suite.all_variations)
    return make_backend(spec)


# -- running ----------------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeKey:
    family: str
    index: int
    variation_id: str
    seed: int


def _run_one(
    config: BenchmarkConfig, suite: Suite, policy: RetrievalPolicy | None, backend: Backend | None,
    variation: TaskVariation,
) -> EpisodeResult:
    if config.strategy == "oracle":
        return run_oracle(suite.world, variation)
    llm = LLMClient(fork_backend(backend)) if backend is not None else None
    if config.strategy == "llm-every-step":
        assert llm is not None
        return run_llm_every_step(suite.world, variation, llm, config.switch)
    switch = replace(config.switch, sage_enabled=config.strategy == "swiftsage")
    return run_episode(suite.world, variation, policy, llm, switch)


@dataclass
class BenchmarkRun:
    config: BenchmarkConfig
    suite: Suite
    results: list[tuple[EpisodeKey, EpisodeResult]]
    oracle_lens: dict[str, float]
    report: "MetricsReport"


def run_benchmark(
    config: BenchmarkConfig,
    policy: RetrievalPolicy | None = None,
    backend: Backend | None = None,
) -> BenchmarkRun:
    """Run every selected (variation, seed) and aggregate a report.

    Results are folded in (task, variation, seed) order regardless of the
    order in which parallel episodes finish.
    """
    config.validated()
    suite = load_suite(config)
    if config.strategy in ("swiftsage", "swift-only") and policy is None:
        policy = RetrievalPolicy.load(config.policy_path, suite.world.catalog) if config.policy_path else None
        if policy is None:
            policy = train_policy(suite, replace(config.balance, seed=config.seeds[0]))
    if backend is None:
        backend = build_backend(config, suite)
    jobs = [
        (EpisodeKey(v.family, v.index, v.id, seed), v)
        for v in suite.variations
        for seed in config.seeds
    ]
    family_order = {f: i for i, f in enumerate(config.families)}
    jobs.sort(key=lambda j: (family_order[j[0].family], j[0].index, j[0].seed))

    def work(job):
        return _run_one(config, suite, policy, backend, job[1])

    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            episodes = list(pool.map(work, jobs))
    else:
        episodes = [work(j) for j in jobs]
    results = [(key, ep) for (key, _), ep in zip(jobs, episodes)]

    lens_by_task: dict[str, list[int]] = {}
    for v in suite.variations:
        lens_by_task.setdefault(v.family, []).append(len(solve(suite.world, v)))
    oracle_lens = {t: sum(ls) / len(ls) for t, ls in lens_by_task.items()}
    report = compute_metrics([(k.family, ep) for k, ep in results], oracle_lens, config.strategy)
    return BenchmarkRun(config, suite, results, oracle_lens, report)


def run_single(config: BenchmarkConfig, variation_id: str, policy: RetrievalPolicy | None = None) -> EpisodeResult:
    """Run one variation, looked up by id across every split of the configured families."""
    config.validated()
    family_id, _, rest = variation_id.partition("-")
    split, _, _ = rest.rpartition("-")
    if family_id not in config.families or not split:
        raise ConfigError(f"unknown variation {variation_id!r}")
    cfg = replace(config, families=(family_id,), split=split, per_family=10**6)
    suite = load_suite(cfg)
    matches = [v for v in suite.variations if v.id == variation_id]
    if not matches:
        raise ConfigError(f"unknown variation {variation_id!r}")
    if cfg.strategy in ("swiftsage", "swift-only") and policy is None:
        if cfg.policy_path:
            policy = RetrievalPolicy.load(cfg.policy_path, suite.world.catalog)
        else:
            policy = train_policy(load_suite(config), replace(cfg.balance, seed=cfg.seeds[0]))
    return _run_one(cfg, suite, policy, build_backend(cfg, load_suite(config)), matches[0])


# -- metrics -------------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    name: str
    episodes: int
    avg_score: float | None
    avg_last_nonnegative: float | None
    tpa: float | None
    spa: float | None
    avg_length: float | None
    total_tokens: int
    total_actions: int
    oracle_len: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class MetricsReport:
    strategy: str
    tasks: tuple[MetricRow, ...]
    groups: tuple[MetricRow, ...]
    overall: MetricRow

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "strategy": self.strategy,
            "tasks": [r.to_dict() for r in self.tasks],
            "groups": [r.to_dict() for r in self.groups],
            "overall": self.overall.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def format_table(self) -> str:
        head = ("row", "n", "score", "last>=0", "tpa", "spa", "len", "*Len")
        rows = [head]

        def fmt(x, spec=".2f"):
            return "-" if x is None else format(x, spec)

        for r in (*self.tasks, *self.groups, self.overall):
            rows.append((
                r.name, str(r.episodes), fmt(r.avg_score), fmt(r.avg_last_nonnegative),
                fmt(r.tpa), fmt(r.spa), fmt(r.avg_length), fmt(r.oracle_len),
            ))
        widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return f"strategy: {self.strategy}\n" + "\n".join(lines)


def _mean(xs: Sequence[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def _ratio(num: float, den: int) -> float | None:
    return num / den if den else None


def _row(name: str, episodes: Sequence[EpisodeResult], oracle_len: float | None = None) -> MetricRow:
    tokens = sum(e.total_tokens for e in episodes)
    actions = sum(e.num_actions for e in episodes)
    score_total = sum(e.last_nonnegative_score for e in episodes)
    return MetricRow(
        name=name,
        episodes=len(episodes),
        avg_score=_mean([e.final_score for e in episodes]),
        avg_last_nonnegative=_mean([e.last_nonnegative_score for e in episodes]),
        tpa=_ratio(tokens, actions) if episodes else None,
        spa=_ratio(score_total, actions) if episodes else None,
        avg_length=_mean([e.num_actions for e in episodes]),
        total_tokens=tokens,
        total_actions=actions,
        oracle_len=oracle_len,
    )


def _pooled(name: str, task_rows: Sequence[MetricRow], episodes: Sequence[EpisodeResult]) -> MetricRow:
    """Scores averaged over task means; tpa/spa as ratios of pooled totals."""
    base = _row(name, episodes)
    return replace(
        base,
        avg_score=_mean([r.avg_score for r in task_rows if r.avg_score is not None]),
        avg_last_nonnegative=_mean([r.avg_last_nonnegative for r in task_rows if r.avg_last_nonnegative is not None]),
    )


def compute_metrics(
    results: Iterable[tuple[str, EpisodeResult]],
    oracle_lens: Mapping[str, float],
    strategy: str = "",
) -> MetricsReport:
    """Aggregate (task, episode) pairs into per-task, per-group and overall rows."""
    by_task: dict[str, list[EpisodeResult]] = {}
    for task, ep in results:
        by_task.setdefault(task, []).append(ep)
    if not by_task:
        raise ValueError("compute_metrics needs at least one result")
    missing = sorted(set(by_task) - set(oracle_lens))
    if missing:
        raise ValueError(f"no oracle length for task(s): {', '.join(missing)}")
    tasks = tuple(_row(t, eps, oracle_lens[t]) for t, eps in by_task.items())
    groups = []
    for gname, _, _ in GROUPS:
        members = [r for r in tasks if length_group(r.oracle_len) == gname]
        eps = [e for r in members for e in by_task[r.name]]
        groups.append(_pooled(gname, members, eps))
    overall = _pooled("Overall", tasks, [e for eps in by_task.values() for e in eps])
    return MetricsReport(strategy or (next(iter(by_task.values()))[0].strategy), tasks, tuple(groups), overall)


# -- export -----------------------------------------------------------------------------------

def export_trajectories(results: Iterable[tuple[EpisodeKey, EpisodeResult]], path: str | Path) -> None:
    """One JSON line per transition, tagged with its episode and mode."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, ep in results:
            for t, (tr, (mode, cond)) in enumerate(zip(ep.trajectory, ep.mode_log)):
                row = {
                    "schema": TRAJECTORY_SCHEMA,
                    "variation_id": key.variation_id,
                    "family": key.family,
                    "seed": key.seed,
                    "strategy": ep.strategy,
                    "t": t,
                    "mode": mode,
                    "condition": cond,
                    "transition": tr.to_dict(),
                }
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def load_trajectories(path: str | Path) -> dict[tuple[str, str, int], list[Transition]]:
    """Inverse of :func:`export_trajectories`: (variation, strategy, seed) -> transitions."""
    out: dict[tuple[str, str, int], list[Transition]] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            row = json.loads(line)
            if row.get("schema") != TRAJECTORY_SCHEMA:
                raise ValueError(f"{path}:{n}: expected schema {TRAJECTORY_SCHEMA}")
            key = (row["variation_id"], row["strategy"], row["seed"])
            seq = out.setdefault(key, [])
            if row["t"] != len(seq):
                raise ValueError(f"{path}:{n}: step {row['t']} out of order")
            seq.append(Transition.from_dict(row["transition"]))
    return out


def score_series(ep: EpisodeResult) -> list[tuple[int, int]]:
    return [(t, tr.score) for t, tr in enumerate(ep.trajectory)]


def emit_plot_data(results: Iterable[tuple[EpisodeKey, EpisodeResult]], directory: str | Path) -> list[Path]:
    """Write one ``<task>.json`` per task holding every episode's (t, S_t) curve."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_task: dict[str, list[dict[str, Any]]] = {}
    for key, ep in results:
        by_task.setdefault(key.family, []).append(
            {"variation_id": key.variation_id, "seed": key.seed, "strategy": ep.strategy,
             "points": [list(p) for p in score_series(ep)]}
        )
    written = []
    for task, curves in by_task.items():
        p = directory / f"{task}.json"
        p.write_text(json.dumps({"task": task, "curves": curves}, sort_keys=True, indent=1) + "\n", encoding="utf-8")
        written.append(p)
    return written


def record_stub(configs: Sequence[BenchmarkConfig], policy: RetrievalPolicy | None = None) -> StubScript:
    """Freeze the simulated LLM's answers for these runs into a static stub."""
    from .simulated import RecordingBackend

    records: list[tuple[str, str]] = []
    for cfg in configs:
        suite = load_suite(cfg)
        rec = RecordingBackend(OracleLLM(suite.world, suite.all_variations), records)
        run_benchmark(replace(cfg, parallelism=1), policy=policy, backend=rec)
    return RecordingBackend(None, records).script()

