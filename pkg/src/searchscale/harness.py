"""Experiment orchestration: config in, persisted RunSet and metrics out.

A run samples K trajectories per problem, verifies distinct candidate
answers when a verifier is configured, and appends every record to a single
JSONL stream in a canonical order (meta, problems, trajectories,
verifications). One writer owns the stream; worker threads only compute.
Records are flushed as produced, so a killed run resumes from any prefix
and the finished file is byte-identical to an uninterrupted one.

Config digests cover semantic fields only (problem source, policies,
backends without secrets, rules, k, base seed, template texts). Execution
details like worker_cap and output_dir stay out, so scheduling cannot
change what a run means. The meta line's created_at honors
SOURCE_DATE_EPOCH for reproducible output.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path
from typing import Iterable, Sequence

from .aggregation import (
    RULES,
    VERIFIER_RULES,
    candidates_from_runset,
    canonicalize,
    frontier,
    k_ladder,
    rule_accuracy,
    write_frontier_csv,
)
from .domain import (
    Problem,
    RunSet,
    ScalingPolicy,
    Termination,
    Trajectory,
    VerificationRecord,
    canonical_json,
    derive_seed,
    dump_line,
    read_runset,
)
from .gateway import Backend, BackendConfig, build_backend
from .runtime import load_template, run_trajectory
from .search_tool import LiveSearchProvider
from .simworld import SimWorldProvider, WorldSpec, instance_for_problem, problems_from_spec, scripted_searcher, scripted_verifier
from .verifier import VerifierPolicy, verify_candidate

logger = logging.getLogger(__name__)

RUNSET_FILENAME = "runset.jsonl"

# crash-injection hooks for the recovery tests: exit hard after N records,
# optionally leaving a half-written line behind
FAULT_EXIT_AFTER_ENV = "SEARCHSCALE_FAULT_EXIT_AFTER"
FAULT_PARTIAL_ENV = "SEARCHSCALE_FAULT_PARTIAL"


class ConfigError(ValueError):
    """Bad or inconsistent run configuration; maps to CLI exit code 1."""


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class SimulatedProblems:
    spec: WorldSpec
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ConfigError("problem count must be >= 1")

    def to_dict(self) -> dict:
        rec = {"source": "simulated", "count": self.count}
        rec.update(self.spec.to_record())
        return rec


@dataclass(frozen=True)
class JsonlProblems:
    path: str

    def to_dict(self) -> dict:
        return {"source": "jsonl", "path": self.path}


@dataclass(frozen=True)
class RunConfig:
    problems: SimulatedProblems | JsonlProblems
    searcher_backend: BackendConfig
    searcher_policy: ScalingPolicy
    k: int = 1
    rules: tuple[str, ...] = ("pass",)
    base_seed: int = 0
    verifier_backend: BackendConfig | None = None
    verifier_policy: VerifierPolicy | None = None
    verify_per_trajectory: bool = False
    templates: dict = field(default_factory=dict)
    live_search: dict = field(default_factory=dict)
    worker_cap: int = 1
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.worker_cap < 1:
            raise ConfigError("worker_cap must be >= 1")
        if not self.rules:
            raise ConfigError("at least one aggregation rule is required")
        for rule in self.rules:
            if rule not in RULES:
                raise ConfigError(f"unknown rule {rule!r}; choose from {', '.join(RULES)}")
        has_verifier = self.verifier_backend is not None and self.verifier_policy is not None
        if (self.verifier_backend is None) != (self.verifier_policy is None):
            raise ConfigError("verifier backend and policy must be configured together")
        for rule in self.rules:
            if rule in VERIFIER_RULES and not has_verifier:
                raise ConfigError(f"rule {rule!r} requires a verifier")
        if self.verify_per_trajectory and not has_verifier:
            raise ConfigError("verify_per_trajectory requires a verifier")

    @property
    def has_verifier(self) -> bool:
        return self.verifier_backend is not None

    def to_dict(self) -> dict:
        out = {
            "problems": self.problems.to_dict(),
            "searcher": {
                "backend": self.searcher_backend.to_record(),
                "policy": self.searcher_policy.to_record(),
            },
            "k": self.k,
            "rules": list(self.rules),
            "base_seed": self.base_seed,
            "verify_per_trajectory": self.verify_per_trajectory,
            "worker_cap": self.worker_cap,
            "output_dir": self.output_dir,
        }
        if self.verifier_backend is not None and self.verifier_policy is not None:
            out["verifier"] = {
                "backend": self.verifier_backend.to_record(),
                **self.verifier_policy.to_record(),
            }
        if self.templates:
            out["templates"] = dict(self.templates)
        if self.live_search:
            out["live_search"] = dict(self.live_search)
        return out


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from the TOML/preset dict schema."""
    known = {
        "problems", "searcher", "verifier", "k", "rules", "base_seed",
        "verify_per_trajectory", "templates", "live_search", "worker_cap", "output_dir",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "problems" not in data:
        raise ConfigError("no problem source configured; provide [problems] or use a preset")

    pdata = dict(data["problems"])
    source = pdata.pop("source", "simulated")
    if source == "simulated":
        count = pdata.pop("count", 20)
        problems: SimulatedProblems | JsonlProblems = SimulatedProblems(
            spec=WorldSpec.from_record(pdata), count=count
        )
    elif source == "jsonl":
        if "path" not in pdata:
            raise ConfigError("jsonl problem source requires a path")
        problems = JsonlProblems(path=str(pdata["path"]))
    else:
        raise ConfigError(f"unknown problem source {source!r}")

    sdata = data.get("searcher", {})
    searcher_backend = BackendConfig.from_record(sdata.get("backend", {"kind": "scripted", "model_name": "sim-searcher"}))
    searcher_policy = ScalingPolicy.from_record(sdata.get("policy", {"max_tool_calls": 15}))

    verifier_backend = None
    verifier_policy = None
    if data.get("verifier") is not None and "verifier" in data:
        vdata = dict(data["verifier"])
        verifier_backend = BackendConfig.from_record(vdata.pop("backend", {"kind": "scripted", "model_name": "sim-verifier"}))
        if "scaling" not in vdata and "policy" in vdata:
            vdata["scaling"] = vdata.pop("policy")
        vdata.setdefault("scaling", {"max_tool_calls": 10})
        verifier_policy = VerifierPolicy.from_record(vdata)

    try:
        return RunConfig(
            problems=problems,
            searcher_backend=searcher_backend,
            searcher_policy=searcher_policy,
            k=data.get("k", 1),
            rules=tuple(data.get("rules", ["pass"])),
            base_seed=data.get("base_seed", 0),
            verifier_backend=verifier_backend,
            verifier_policy=verifier_policy,
            verify_per_trajectory=data.get("verify_per_trajectory", False),
            templates=dict(data.get("templates", {})),
            live_search=dict(data.get("live_search", {})),
            worker_cap=data.get("worker_cap", 1),
            output_dir=str(data.get("output_dir", "runs")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _template_texts(config: RunConfig) -> dict[str, str]:
    overrides = config.templates
    searcher = load_template(
        "searcher",
        body_path=overrides.get("searcher"),
        forcing_path=overrides.get("forcing"),
    )
    verifier_t = load_template(
        "verifier",
        body_path=overrides.get("verifier"),
        forcing_path=overrides.get("forcing"),
    )
    return {
        "searcher": searcher.body,
        "verifier": verifier_t.body,
        "forcing": searcher.forcing_message,
    }


def semantic_dict(config: RunConfig) -> dict:
    """The digest input: everything that changes results, nothing that doesn't."""
    out = config.to_dict()
    out.pop("worker_cap", None)
    out.pop("output_dir", None)
    out.pop("templates", None)
    out["template_sha256"] = {
        role: sha256(text.encode("utf-8")).hexdigest()
        for role, text in sorted(_template_texts(config).items())
    }
    if isinstance(config.problems, JsonlProblems):
        out["problems"]["sha256"] = sha256(Path(config.problems.path).read_bytes()).hexdigest()
    return out


def config_digest(config: RunConfig) -> str:
    return sha256(canonical_json(semantic_dict(config)).encode("utf-8")).hexdigest()


# --- presets ----------------------------------------------------------------

_SIM_PROBLEMS = {"source": "simulated", "count": 50, "n_entities": 50, "n_attributes": 6, "n_constraints": 3, "reveal_prob": 0.3, "seed": 7}

PRESETS: dict[str, dict] = {
    "baseline": {
        "description": "single trajectory per problem, no verifier, Pass@1 over the default simulated world",
        "config": {
            "problems": dict(_SIM_PROBLEMS),
            "searcher": {"backend": {"kind": "scripted", "model_name": "sim-searcher"}, "policy": {"max_tool_calls": 15}},
            "k": 1,
            "rules": ["pass"],
            "base_seed": 42,
        },
    },
    "forcing": {
        "description": "baseline plus one budget-forcing round of 15 extra calls",
        "config": {
            "problems": dict(_SIM_PROBLEMS),
            "searcher": {
                "backend": {"kind": "scripted", "model_name": "sim-searcher"},
                "policy": {"max_tool_calls": 15, "forcing_rounds": 1, "forcing_increment": 15},
            },
            "k": 1,
            "rules": ["pass"],
            "base_seed": 42,
        },
    },
    "parallel": {
        "description": "eight trajectories per problem, Pass@K and Maj@K, no verifier",
        "config": {
            "problems": dict(_SIM_PROBLEMS),
            "searcher": {"backend": {"kind": "scripted", "model_name": "sim-searcher"}, "policy": {"max_tool_calls": 15}},
            "k": 8,
            "rules": ["pass", "maj"],
            "base_seed": 42,
        },
    },
    "heavy-sim": {
        "description": "forcing plus k=8 sampling with a 4-sample verifier and weighted voting",
        "config": {
            "problems": dict(_SIM_PROBLEMS),
            "searcher": {
                "backend": {"kind": "scripted", "model_name": "sim-searcher"},
                "policy": {"max_tool_calls": 15, "forcing_rounds": 1, "forcing_increment": 15},
            },
            "verifier": {
                "backend": {"kind": "scripted", "model_name": "sim-verifier"},
                "policy": {"max_tool_calls": 10},
                "samples": 4,
            },
            "k": 8,
            "rules": ["pass", "maj", "best_of_k", "weighted"],
            "base_seed": 42,
        },
    },
    "asymmetry": {
        "description": "generous solve budget and a single-sample verifier for solve/verify cost measurement",
        "config": {
            "problems": dict(_SIM_PROBLEMS, count=200, reveal_prob=0.2),
            "searcher": {"backend": {"kind": "scripted", "model_name": "sim-searcher"}, "policy": {"max_tool_calls": 50}},
            "verifier": {
                "backend": {"kind": "scripted", "model_name": "sim-verifier"},
                "policy": {"max_tool_calls": 10},
                "samples": 1,
            },
            "k": 1,
            "rules": ["pass"],
            "base_seed": 42,
        },
    },
}


def preset(name: str) -> dict:
    """Named RunConfig fragment; unknown names list the alternatives."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    return json.loads(json.dumps(PRESETS[name]["config"]))


def deep_merge(base: dict, override: dict) -> dict:
    """Recursive dict overlay; a None override value deletes the key."""
    out = dict(base)
    for key, value in override.items():
        if value is None:
            out.pop(key, None)
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config_file(path) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from exc


# --- problem sets -----------------------------------------------------------

def write_problems(problems: Sequence[Problem], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(dump_line(p.to_record()))


def read_problems(path) -> list[Problem]:
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: bad problem record: {exc}") from exc
            if rec.get("kind") != "problem":
                continue
            problems.append(Problem.from_record(rec))
    if not problems:
        raise ConfigError(f"{path}: no problem records found")
    return problems


def resolve_problems(config: RunConfig) -> list[Problem]:
    if isinstance(config.problems, SimulatedProblems):
        return problems_from_spec(config.problems.spec, config.problems.count)
    problems = read_problems(config.problems.path)
    seen = set()
    for p in problems:
        if p.id in seen:
            raise ConfigError(f"duplicate problem id {p.id!r} in {config.problems.path}")
        seen.add(p.id)
    return problems


# --- execution --------------------------------------------------------------

def _created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    ts = int(epoch) if epoch else int(time.time())
    return datetime.fromtimestamp(ts, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class _RecordWriter:
    """Sole owner of the persistence stream; flushes every record."""

    def __init__(self, fh):
        self.fh = fh
        self.written = 0
        raw = os.environ.get(FAULT_EXIT_AFTER_ENV)
        self._fault_after = int(raw) if raw else -1
        self._fault_partial = os.environ.get(FAULT_PARTIAL_ENV) == "1"

    def write(self, record: dict) -> None:
        line = dump_line(record)
        if 0 <= self._fault_after <= self.written:
            if self._fault_partial:
                self.fh.write(line[: max(1, len(line) // 2)])
            self.fh.flush()
            os._exit(137)
        self.fh.write(line)
        self.fh.flush()
        self.written += 1


@dataclass
class _ResumeState:
    meta: dict | None = None
    problem_ids: set = field(default_factory=set)
    trajectories: dict = field(default_factory=dict)   # (problem_id, seed) -> Trajectory
    verifications: dict = field(default_factory=dict)  # (problem_id, candidate, seed) -> record


def _load_resume_state(path: Path, digest: str) -> _ResumeState:
    """Parse the valid prefix of a crashed run, truncating any partial tail."""
    state = _ResumeState()
    if not path.exists():
        return state
    good_bytes = 0
    with open(path, "rb") as fh:
        data = fh.read()
    for raw_line in data.splitlines(keepends=True):
        if not raw_line.endswith(b"\n"):
            break
        try:
            rec = json.loads(raw_line.decode("utf-8"))
            kind = rec["kind"]
            if kind == "meta":
                state.meta = rec
            elif kind == "problem":
                state.problem_ids.add(Problem.from_record(rec).id)
            elif kind == "trajectory":
                t = Trajectory.from_record(rec)
                state.trajectories[(t.problem_id, t.seed)] = t
            elif kind == "verification":
                v = VerificationRecord.from_record(rec)
                state.verifications[(v.problem_id, v.candidate_answer, v.seed)] = v
            else:
                raise ValueError(f"unknown kind {kind!r}")
        except (json.JSONDecodeError, KeyError, ValueError):
            break
        good_bytes += len(raw_line)
    if state.meta is not None and state.meta.get("config_digest") != digest:
        raise ConfigError(
            "cannot resume: the persisted run was produced by a different configuration "
            f"(digest {state.meta.get('config_digest', '?')[:12]} != {digest[:12]})"
        )
    if good_bytes < len(data):
        logger.warning("truncating %d bytes of partial tail in %s", len(data) - good_bytes, path)
        with open(path, "r+b") as fh:
            fh.truncate(good_bytes)
    return state


def _shared_http_backend(backend_config: BackendConfig | None, worker_cap: int) -> Backend | None:
    """One long-lived backend per http role. The credential's presence (never
    its value) is checked up front so a dead run fails as a config error
    instead of persisting a full set of backend_error trajectories."""
    if backend_config is None or backend_config.kind != "http":
        return None
    if not os.environ.get(backend_config.api_key_env or ""):
        raise ConfigError(
            f"credential variable {backend_config.api_key_env!r} is not set; "
            "export it before running"
        )
    return build_backend(backend_config, max_in_flight=worker_cap)


def _bind_searcher(config: RunConfig, problem: Problem, shared_http: Backend | None):
    if config.searcher_backend.kind == "http":
        return shared_http
    return build_backend(config.searcher_backend, scripted_searcher(instance_for_problem(problem)))


def _bind_verifier(config: RunConfig, problem: Problem, shared_http: Backend | None):
    if config.verifier_backend is None:
        return None
    if config.verifier_backend.kind == "http":
        return shared_http
    return build_backend(config.verifier_backend, scripted_verifier(instance_for_problem(problem)))


def _bind_provider(config: RunConfig, problem: Problem, shared_live):
    if problem.world is not None:
        return SimWorldProvider(instance_for_problem(problem))
    if shared_live is None:
        raise ConfigError(
            f"problem {problem.id!r} has no simulated world and no [live_search] endpoint is configured"
        )
    return shared_live


def _verification_groups(config: RunConfig, problem: Problem, trajectories: Sequence[Trajectory]):
    """(candidate raw text, verification base seed) pairs in canonical order."""
    groups: list[tuple[str, int]] = []
    if config.verify_per_trajectory:
        for idx, traj in enumerate(trajectories):
            raw = traj.final_answer or ""
            if canonicalize(raw):
                groups.append((raw, derive_seed(config.base_seed, problem.id, "verify-traj", idx)))
    else:
        seen: set[str] = set()
        for traj in trajectories:
            raw = traj.final_answer or ""
            canon = canonicalize(raw)
            if canon and canon not in seen:
                seen.add(canon)
                groups.append((raw, derive_seed(config.base_seed, problem.id, "verify", canon)))
    return groups


def run(config: RunConfig, resume: bool = False) -> tuple[RunSet, Path]:
    """Execute a full run, persisting incrementally; returns the RunSet and
    its file path. With resume=True, previously persisted records are kept
    and only the remainder is computed."""
    problems = resolve_problems(config)
    if config.searcher_backend.kind == "scripted" or (
        config.verifier_backend is not None and config.verifier_backend.kind == "scripted"
    ):
        for p in problems:
            if p.world is None:
                raise ConfigError(f"scripted backends need simulated problems; {p.id!r} has no world")

    digest = config_digest(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RUNSET_FILENAME

    if resume:
        state = _load_resume_state(path, digest)
    else:
        state = _ResumeState()
        if path.exists():
            path.unlink()

    created_at = state.meta["created_at"] if state.meta else _created_at()
    meta = {
        "kind": "meta",
        "config_digest": digest,
        "created_at": created_at,
        "config": semantic_dict(config),
    }

    searcher_http = _shared_http_backend(config.searcher_backend, config.worker_cap)
    verifier_http = _shared_http_backend(config.verifier_backend, config.worker_cap)
    shared_live = None
    if config.live_search.get("endpoint"):
        shared_live = LiveSearchProvider(
            endpoint=config.live_search["endpoint"],
            timeout=config.live_search.get("timeout", 20.0),
            fetch_pages=config.live_search.get("fetch_pages", False),
        )

    searcher_template = load_template(
        "searcher", body_path=config.templates.get("searcher"), forcing_path=config.templates.get("forcing")
    )
    verifier_template = load_template(
        "verifier", body_path=config.templates.get("verifier"), forcing_path=config.templates.get("forcing")
    )

    def trajectories_for(problem: Problem) -> list[Trajectory]:
        wanted = [config.base_seed + i for i in range(1, config.k + 1)]
        if all((problem.id, s) in state.trajectories for s in wanted):
            return [state.trajectories[(problem.id, s)] for s in wanted]
        backend = _bind_searcher(config, problem, searcher_http)
        provider = _bind_provider(config, problem, shared_live)
        out = []
        for s in wanted:
            done = state.trajectories.get((problem.id, s))
            out.append(
                done
                if done is not None
                else run_trajectory(problem, config.searcher_policy, backend, provider, s, template=searcher_template)
            )
        return out

    def verifications_for(problem: Problem, trajectories: Sequence[Trajectory]) -> list[VerificationRecord]:
        assert config.verifier_policy is not None
        backend = _bind_verifier(config, problem, verifier_http)
        provider = _bind_provider(config, problem, shared_live)
        records: list[VerificationRecord] = []
        for raw, vbase in _verification_groups(config, problem, trajectories):
            sample_seeds = [vbase + i for i in range(1, config.verifier_policy.samples + 1)]
            loaded = [state.verifications.get((problem.id, raw, s)) for s in sample_seeds]
            if all(rec is not None for rec in loaded):
                records.extend(loaded)  # type: ignore[arg-type]
                continue
            group, _ = verify_candidate(
                problem, raw, config.verifier_policy, backend, provider, vbase, template=verifier_template
            )
            records.extend(group)
        return records

    started = time.monotonic()
    trajectories: dict[str, list[Trajectory]] = {}
    verifications: dict[str, list[VerificationRecord]] = {}

    mode = "a" if resume and path.exists() else "w"
    with open(path, mode, encoding="utf-8") as fh:
        writer = _RecordWriter(fh)
        if state.meta is None:
            writer.write(meta)
        for p in problems:
            if p.id not in state.problem_ids:
                writer.write(p.to_record())

        with ThreadPoolExecutor(max_workers=config.worker_cap) as pool:
            traj_futures = {p.id: pool.submit(trajectories_for, p) for p in problems}
            verif_futures = {}
            for p in problems:
                trajs = traj_futures[p.id].result()
                trajectories[p.id] = trajs
                for t in trajs:
                    if (p.id, t.seed) not in state.trajectories:
                        writer.write(t.to_record())
                if config.has_verifier:
                    verif_futures[p.id] = pool.submit(verifications_for, p, trajs)
            for p in problems:
                if p.id not in verif_futures:
                    continue
                records = verif_futures[p.id].result()
                verifications[p.id] = records
                for rec in records:
                    if (p.id, rec.candidate_answer, rec.seed) not in state.verifications:
                        writer.write(rec.to_record())

    runset = RunSet(
        config_digest=digest,
        problems=problems,
        trajectories=trajectories,
        verifications=verifications,
        created_at=created_at,
        config=meta["config"],
    )
    runset.validate()
    logger.info(
        "run complete: %d problems x k=%d in %.1fs -> %s",
        len(problems), config.k, time.monotonic() - started, path,
    )
    return runset, path


# --- metrics, asymmetry, reporting ------------------------------------------

@dataclass(frozen=True)
class AsymmetryRow:
    label: str
    n_problems: int
    solve_trajectories: int
    mean_solve_calls: float | None
    correct_verifications: int
    mean_verify_calls: float | None

    @property
    def ratio(self) -> float | None:
        if not self.mean_solve_calls or not self.mean_verify_calls:
            return None
        return self.mean_solve_calls / self.mean_verify_calls


def asymmetry_from_runset(runset: RunSet, label: str = "run") -> AsymmetryRow:
    """Mean solve cost over answered trajectories vs mean verify cost over
    verifications of correct candidates. Starved and error runs are excluded
    from the solve column so the measurement reflects actual solving."""
    solve = [
        t.tool_calls_used
        for t in runset.all_trajectories()
        if t.termination is Termination.ANSWERED
    ]
    golds = {p.id: canonicalize(p.gold_answer) for p in runset.problems if p.gold_answer}
    verify = [
        v.tool_calls_used
        for v in runset.all_verifications()
        if golds.get(v.problem_id) and canonicalize(v.candidate_answer) == golds[v.problem_id]
    ]
    return AsymmetryRow(
        label=label,
        n_problems=len(runset.problems),
        solve_trajectories=len(solve),
        mean_solve_calls=sum(solve) / len(solve) if solve else None,
        correct_verifications=len(verify),
        mean_verify_calls=sum(verify) / len(verify) if verify else None,
    )


def measure_asymmetry(config: RunConfig, resume: bool = False) -> AsymmetryRow:
    if not config.has_verifier:
        raise ConfigError("measure-asymmetry requires a verifier")
    runset, _ = run(config, resume=resume)
    return asymmetry_from_runset(runset)


def runset_metrics(runset: RunSet) -> dict[str, float]:
    """Per-rule accuracies at every ladder point, recomputed from records."""
    rules = [r for r in runset.config.get("rules", ["pass"]) if r in RULES]
    k = runset.config.get("k") or max((len(ts) for ts in runset.trajectories.values()), default=1)
    golds = []
    per_problem = []
    for p in runset.problems:
        if p.gold_answer is None:
            return {}
        golds.append(p.gold_answer)
        per_problem.append(candidates_from_runset(runset, p))
    metrics: dict[str, float] = {}
    for rule in rules:
        for kk in k_ladder(k):
            metrics[f"{rule}@{kk}"] = rule_accuracy(per_problem, golds, rule, kk)
    return metrics


def compute_totals(runset: RunSet) -> dict[str, int]:
    searcher = sum(t.tool_calls_used for t in runset.all_trajectories())
    verifier_calls = sum(v.tool_calls_used for v in runset.all_verifications())
    return {
        "problems": len(runset.problems),
        "trajectories": sum(len(ts) for ts in runset.trajectories.values()),
        "verifications": sum(len(vs) for vs in runset.verifications.values()),
        "searcher_calls": searcher,
        "verifier_calls": verifier_calls,
        "total_tool_calls": searcher + verifier_calls,
    }


@dataclass
class Report:
    sections: list[dict]
    merged_totals: dict[str, int]
    frontier_points: list
    skipped_lines: int


def report(runset_paths: Sequence, csv_out=None) -> Report:
    """Summaries recomputed from raw persisted records, never from caches.

    Corrupt lines are skipped with a warning and surface in skipped_lines.
    """
    sections = []
    entries = []
    merged: dict[str, int] = {}
    skipped_total = 0
    for p in runset_paths:
        path = Path(p)
        runset, skipped = read_runset(path, strict=False)
        skipped_total += skipped
        label = path.parent.name or path.stem
        totals = compute_totals(runset)
        for key, value in totals.items():
            merged[key] = merged.get(key, 0) + value
        sections.append(
            {
                "label": label,
                "path": str(path),
                "config_digest": runset.config_digest,
                "created_at": runset.created_at,
                "skipped_lines": skipped,
                "totals": totals,
                "metrics": runset_metrics(runset),
                "asymmetry": asymmetry_from_runset(runset, label) if runset.all_verifications() else None,
            }
        )
        entries.append((label, runset))
    points = []
    if all(p.gold_answer is not None for _, rs in entries for p in rs.problems):
        points = frontier(entries)
        if csv_out is not None:
            write_frontier_csv(points, csv_out)
    return Report(sections=sections, merged_totals=merged, frontier_points=points, skipped_lines=skipped_total)


def format_report(rep: Report) -> str:
    lines = []
    for sec in rep.sections:
        lines.append(f"== {sec['label']} ({sec['path']})")
        lines.append(f"   digest {sec['config_digest'][:12]}  created {sec['created_at']}")
        if sec["skipped_lines"]:
            lines.append(f"   WARNING: skipped {sec['skipped_lines']} corrupt lines")
        t = sec["totals"]
        lines.append(
            f"   problems {t['problems']}  trajectories {t['trajectories']}  "
            f"verifications {t['verifications']}  searcher calls {t['searcher_calls']}  "
            f"verifier calls {t['verifier_calls']}  total {t['total_tool_calls']}"
        )
        if sec["metrics"]:
            width = max(len(name) for name in sec["metrics"])
            for name, value in sec["metrics"].items():
                lines.append(f"   {name:<{width}}  {value:.4f}")
        asym = sec["asymmetry"]
        if asym is not None:
            solve = f"{asym.mean_solve_calls:.2f}" if asym.mean_solve_calls is not None else "n/a"
            verify = f"{asym.mean_verify_calls:.2f}" if asym.mean_verify_calls is not None else "unavailable"
            ratio = f"{asym.ratio:.2f}" if asym.ratio is not None else "n/a"
            lines.append(f"   asymmetry: solve {solve}  verify {verify}  ratio {ratio}")
    if len(rep.sections) > 1:
        t = rep.merged_totals
        lines.append(
            f"== merged totals: trajectories {t['trajectories']}  verifications {t['verifications']}  "
            f"total tool calls {t['total_tool_calls']}"
        )
    return "\n".join(lines)
