"""Command-line entry point: ``deskagent {run,train-swift,bench,export}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .fast import BalanceConfig, RetrievalPolicy, build_dataset, save_examples
from .harness import (
    STRATEGIES,
    BenchmarkConfig,
    ConfigError,
    emit_plot_data,
    export_trajectories,
    load_suite,
    record_stub,
    run_benchmark,
    run_single,
)
from .llm import LLMError
from .oracle import solve
from .world.spec import SpecError

log = logging.getLogger("deskagent")


def _add_global(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML benchmark config; command-line flags override it")
    p.add_argument("--seed", type=int, default=None, help="seed for dataset balancing (default 0)")
    p.add_argument("--backend", choices=("oracle", "stub", "http"), default=None,
                   help="LLM backend: simulated oracle, scripted stub, or HTTP endpoint")
    p.add_argument("--stub", help="stub script YAML (implies --backend stub)")
    p.add_argument("--base-url", help="HTTP endpoint base URL (with --backend http)")
    p.add_argument("--model", help="model name for the HTTP backend")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_selection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--families", nargs="+", default=None, help="task families to run")
    p.add_argument("--split", default=None, help="variation split (default: test)")
    p.add_argument("--per-family", type=int, default=None, help="first N variations per family (default 10)")
    p.add_argument("--policy", help="saved fast policy (default: fit on the training split)")
    p.add_argument("--parallelism", type=int, default=None)


def _config(args: argparse.Namespace) -> BenchmarkConfig:
    cfg = BenchmarkConfig.load(args.config) if args.config else BenchmarkConfig()
    over = {}
    for name, key in (("strategy", "strategy"), ("split", "split"), ("per_family", "per_family"),
                      ("policy", "policy_path"), ("parallelism", "parallelism")):
        value = getattr(args, name, None)
        if value is not None:
            over[key] = value
    if getattr(args, "families", None):
        over["families"] = tuple(args.families)
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    backend = dict(cfg.backend)
    if args.stub:
        backend = {"kind": "stub", "script": args.stub}
    elif args.backend == "http":
        backend = {"kind": "http", "base_url": args.base_url, "model": args.model}
    elif args.backend:
        backend = {"kind": args.backend}
    over["backend"] = backend
    return replace(cfg, **over).validated()


# -- verbs ---------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ep = run_single(cfg, args.variation)
    print(f"variation: {ep.variation_id} ({ep.strategy})")
    for t, (tr, (mode, cond)) in enumerate(zip(ep.trajectory, ep.mode_log)):
        tag = mode + (f"/{cond}" if cond else "")
        print(f"{t:3d} [{tag:<16}] {tr.action.surface:<40} {tr.score:4d}  {tr.observation}")
    for e in ep.events:
        print(f"event: {json.dumps(e, sort_keys=True, ensure_ascii=False)}")
    print(
        f"result: score={ep.final_score} actions={ep.num_actions} "
        f"tokens={ep.total_tokens} reason={ep.terminated_reason}"
    )
    return 0


def cmd_train_swift(args: argparse.Namespace) -> int:
    cfg = _config(args)
    suite = load_suite(cfg)
    downsample = dict(_pair(s) for s in args.downsample or [])
    balance = replace(
        cfg.balance,
        seed=cfg.seeds[0],
        max_trajectories_per_family=args.max_per_family if args.max_per_family is not None else cfg.balance.max_trajectories_per_family,
        downsample={**cfg.balance.downsample, **downsample},
    )
    trajectories = [solve(suite.world, v) for v in suite.training]
    examples = build_dataset(trajectories, balance, suite.world.catalog)
    if args.dataset:
        save_examples(examples, args.dataset)
    policy = RetrievalPolicy(catalog=suite.world.catalog).fit_examples(examples)
    policy.save(args.out)
    print(f"fitted on {len(examples)} examples from {len(trajectories)} trajectories -> {args.out}")
    print(f"fingerprint {policy.fingerprint_}")
    return 0


def _pair(text: str) -> tuple[str, float]:
    pattern, sep, rate = text.rpartition("=")
    if not sep:
        raise ConfigError(f"expected PATTERN=RATE, got {text!r}")
    return pattern, float(rate)


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config(args)
    start = time.perf_counter()
    run = run_benchmark(cfg)
    elapsed = time.perf_counter() - start
    print(run.report.format_table())
    print(f"({len(run.results)} episodes in {elapsed:.2f}s)", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(run.report.to_json(), encoding="utf-8")
    if args.trajectories:
        export_trajectories(run.results, args.trajectories)
    if args.record_stub:
        configs = [replace(cfg, strategy=s) for s in ("swiftsage", "llm-every-step")]
        record_stub(configs).dump(args.record_stub)
        print(f"stub script written to {args.record_stub}", file=sys.stderr)
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    cfg = _config(args)
    run = run_benchmark(cfg)
    if args.trajectories:
        export_trajectories(run.results, args.trajectories)
        print(f"trajectories -> {args.trajectories}")
    if args.plot_dir:
        for p in emit_plot_data(run.results, args.plot_dir):
            print(f"plot data -> {p}")
    if args.dataset:
        suite = load_suite(cfg)
        examples = build_dataset([solve(suite.world, v) for v in suite.training], BalanceConfig(seed=cfg.seeds[0]))
        save_examples(examples, args.dataset)
        print(f"imitation dataset -> {args.dataset}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deskagent", description="Fast/slow text-world agent toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single episode with a verbose event log")
    _add_global(p)
    _add_selection(p)
    p.add_argument("variation", help="variation id, e.g. boil-test-0")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-swift", help="build the imitation dataset, fit and save the fast policy")
    _add_global(p)
    _add_selection(p)
    p.add_argument("--out", required=True, help="where to write the fitted policy (JSON)")
    p.add_argument("--dataset", help="also write the imitation examples (JSONL)")
    p.add_argument("--max-per-family", type=int, default=None)
    p.add_argument("--downsample", nargs="*", metavar="PATTERN=RATE",
                   help="keep rate for target actions matching a glob, e.g. 'close *=0.5'")
    p.set_defaults(func=cmd_train_swift)

    p = sub.add_parser("bench", help="run the benchmark and print the metrics table")
    _add_global(p)
    _add_selection(p)
    p.add_argument("--out", help="write the metrics report as JSON")
    p.add_argument("--trajectories", help="also export trajectories (JSONL)")
    p.add_argument("--record-stub", help="freeze the simulated LLM's answers into a stub script")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="export trajectories, plot data and the imitation dataset")
    _add_global(p)
    _add_selection(p)
    p.add_argument("--trajectories", help="JSONL trajectory file")
    p.add_argument("--plot-dir", help="directory for per-task score-vs-step series")
    p.add_argument("--dataset", help="imitation dataset JSONL built from training oracle runs")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (LLMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
