"""Command line interface.

Config assembly order for run-like commands: preset fragment, then config
file, then individual flags. Later layers win key by key. Exit codes: 0 on
success, 1 for configuration problems, 2 for runtime failures (partial
results stay on disk and can be resumed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .domain import canonical_json
from .harness import (
    PRESETS,
    ConfigError,
    asymmetry_from_runset,
    config_from_dict,
    deep_merge,
    format_report,
    load_config_file,
    measure_asymmetry,
    preset,
    report,
    run,
    write_problems,
)
from .simworld import WorldSpec, problems_from_spec

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; bad flags are config errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="start from a named preset (see the presets command)")
    p.add_argument("--config", help="TOML config file layered over the preset")
    p.add_argument("--output-dir", help="directory for runset.jsonl")
    p.add_argument("--resume", action="store_true", help="continue a crashed run in place")
    p.add_argument("--worker-cap", type=int, help="max concurrent trajectory/verification tasks")
    p.add_argument("--k", type=int, help="trajectories sampled per problem")
    p.add_argument("--base-seed", type=int)
    p.add_argument("--rules", help="comma separated: pass,maj,best_of_k,weighted")
    p.add_argument("--problems", help="JSONL problem file (overrides simulated problems)")
    p.add_argument("--count", type=int, help="number of simulated problems")
    p.add_argument("--entities", type=int, help="entities per simulated world")
    p.add_argument("--attributes", type=int, help="attributes per entity")
    p.add_argument("--constraints", type=int, help="constraints per question")
    p.add_argument("--reveal-prob", type=float, help="chance a matching fact surfaces per query")
    p.add_argument("--world-seed", type=int, help="seed for world generation")
    p.add_argument("--max-tool-calls", type=int, help="initial searcher budget")
    p.add_argument("--forcing-rounds", type=int, help="budget forcing rounds after a final answer")
    p.add_argument("--forcing-increment", type=int, help="extra calls granted per forcing round")
    p.add_argument("--step-cap", type=int, help="hard step limit per trajectory (0 = derived)")
    p.add_argument("--temperature", type=float, help="searcher sampling temperature")
    p.add_argument("--model", help="searcher model name (http backends)")
    p.add_argument("--endpoint", help="chat completions base URL; switches the searcher to http")
    p.add_argument("--api-key-env", help="environment variable holding the bearer credential")
    p.add_argument("--no-verifier", action="store_true", help="drop any configured verifier")
    p.add_argument("--verifier-samples", type=int, help="verification trajectories per candidate")
    p.add_argument("--verifier-max-tool-calls", type=int)
    p.add_argument("--verify-per-trajectory", action="store_true",
                   help="verify every trajectory instead of each distinct candidate")


def _overlay_from_flags(args: argparse.Namespace) -> dict:
    overlay: dict = {}

    def put(path: list, value) -> None:
        node = overlay
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    if args.output_dir is not None:
        put(["output_dir"], args.output_dir)
    if args.worker_cap is not None:
        put(["worker_cap"], args.worker_cap)
    if args.k is not None:
        put(["k"], args.k)
    if args.base_seed is not None:
        put(["base_seed"], args.base_seed)
    if args.rules is not None:
        put(["rules"], [r.strip() for r in args.rules.split(",") if r.strip()])
    if args.problems is not None:
        put(["problems"], {"source": "jsonl", "path": args.problems})
    for flag, key in (
        ("count", "count"), ("entities", "n_entities"), ("attributes", "n_attributes"),
        ("constraints", "n_constraints"), ("reveal_prob", "reveal_prob"), ("world_seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            if args.problems is not None:
                raise ConfigError(f"--{flag.replace('_', '-')} conflicts with --problems")
            put(["problems", key], value)
    for flag, key in (
        ("max_tool_calls", "max_tool_calls"), ("forcing_rounds", "forcing_rounds"),
        ("forcing_increment", "forcing_increment"), ("step_cap", "step_cap"),
        ("temperature", "temperature"),
    ):
        value = getattr(args, flag)
        if value is not None:
            put(["searcher", "policy", key], value)
    if args.endpoint is not None:
        put(["searcher", "backend"], {
            "kind": "http",
            "model_name": args.model or "unnamed-model",
            "endpoint": args.endpoint,
            "api_key_env": args.api_key_env or "SEARCHSCALE_API_KEY",
        })
    elif args.model is not None:
        put(["searcher", "backend", "model_name"], args.model)
    if args.no_verifier:
        put(["verifier"], None)
    else:
        if args.verifier_samples is not None:
            put(["verifier", "samples"], args.verifier_samples)
        if args.verifier_max_tool_calls is not None:
            put(["verifier", "policy", "max_tool_calls"], args.verifier_max_tool_calls)
    if args.verify_per_trajectory:
        put(["verify_per_trajectory"], True)
    return overlay


def _assemble_config(args: argparse.Namespace, default_preset: str | None = None):
    merged: dict = {}
    name = args.preset or (default_preset if args.config is None else None)
    if name:
        merged = deep_merge(merged, preset(name))
    if args.config is not None:
        merged = deep_merge(merged, load_config_file(args.config))
    merged = deep_merge(merged, _overlay_from_flags(args))
    return config_from_dict(merged)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _assemble_config(args)
    runset, path = run(config, resume=args.resume)
    print(format_report(report([path])))
    return 0


def _cmd_measure_asymmetry(args: argparse.Namespace) -> int:
    config = _assemble_config(args, default_preset="asymmetry")
    row = measure_asymmetry(config, resume=args.resume)
    solve = f"{row.mean_solve_calls:.2f}" if row.mean_solve_calls is not None else "n/a"
    verify = f"{row.mean_verify_calls:.2f}" if row.mean_verify_calls is not None else "unavailable"
    ratio = f"{row.ratio:.2f}" if row.ratio is not None else "n/a"
    print(f"{'problems':>12} {'solved':>8} {'mean solve':>12} {'verified':>10} {'mean verify':>12} {'ratio':>8}")
    print(f"{row.n_problems:>12} {row.solve_trajectories:>8} {solve:>12} {row.correct_verifications:>10} {verify:>12} {ratio:>8}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rep = report(args.runsets, csv_out=args.csv)
    print(format_report(rep))
    if args.csv and rep.frontier_points:
        print(f"wrote {len(rep.frontier_points)} frontier points to {args.csv}")
    return 0


def _cmd_presets(args: argparse.Namespace) -> int:
    if args.show:
        print(canonical_json(preset(args.show)))
        return 0
    width = max(len(name) for name in PRESETS)
    for name in sorted(PRESETS):
        print(f"{name:<{width}}  {PRESETS[name]['description']}")
    return 0


def _cmd_simgen(args: argparse.Namespace) -> int:
    spec = WorldSpec(
        n_entities=args.entities,
        n_attributes=args.attributes,
        n_constraints=args.constraints,
        reveal_prob=args.reveal_prob,
        seed=args.world_seed,
    )
    problems = problems_from_spec(spec, args.count, id_prefix=args.id_prefix)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_problems(problems, out)
    print(f"wrote {len(problems)} problems to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="searchscale", description="test-time scaling harness for search agents")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_run = sub.add_parser("run", help="sample, verify, and persist a run")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_asym = sub.add_parser("measure-asymmetry", help="solve vs verify tool-call costs")
    _add_config_flags(p_asym)
    p_asym.set_defaults(func=_cmd_measure_asymmetry)

    p_report = sub.add_parser("report", help="recompute metrics from persisted runsets")
    p_report.add_argument("runsets", nargs="+", help="runset.jsonl paths")
    p_report.add_argument("--csv", help="write the compute/accuracy frontier as CSV")
    p_report.set_defaults(func=_cmd_report)

    p_presets = sub.add_parser("presets", help="list named starting configurations")
    p_presets.add_argument("--show", help="print one preset as JSON")
    p_presets.set_defaults(func=_cmd_presets)

    p_gen = sub.add_parser("simgen", help="generate a simulated problem file")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--count", type=int, default=50)
    p_gen.add_argument("--entities", type=int, default=50)
    p_gen.add_argument("--attributes", type=int, default=6)
    p_gen.add_argument("--constraints", type=int, default=3)
    p_gen.add_argument("--reveal-prob", type=float, default=0.3)
    p_gen.add_argument("--world-seed", type=int, default=7)
    p_gen.add_argument("--id-prefix", default="sim")
    p_gen.set_defaults(func=_cmd_simgen)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted; partial results are on disk and resumable", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
