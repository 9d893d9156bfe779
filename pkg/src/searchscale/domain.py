"""Core record types for scaling runs and their JSONL persistence.

Shared vocabulary for the whole engine:

- Problem / Step / Trajectory: one agent rollout and its full step log
- ScalingPolicy: sequential-scaling knobs (tool budget, forcing, step cap)
- VerificationRecord: one verifier pass over a candidate answer
- RunSet: everything a run persists, as tagged JSONL lines

Serialization is canonical (sorted keys, compact separators, UTF-8) so
equal runs produce byte-identical files. Timestamps on steps are logical
ticks, never wall clock, for the same reason.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

RECORD_KINDS = ("meta", "problem", "trajectory", "verification")


def derive_seed(*parts: object) -> int:
    """Mix arbitrary labels into a 63-bit seed, stable across processes.

    Python's hash() is salted per process, so all child-seed derivation goes
    through sha256 instead.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


class Source(str, Enum):
    SIMULATED = "simulated"
    EXTERNAL = "external"


class StepKind(str, Enum):
    REASONING = "reasoning"
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    BUDGET_NOTICE = "budget_notice"
    FORCING_INJECTION = "forcing_injection"
    FINAL_ANSWER = "final_answer"


class Termination(str, Enum):
    ANSWERED = "answered"
    STEP_CAP = "step_cap"
    BACKEND_ERROR = "backend_error"
    TOOL_EXHAUSTED_THEN_ANSWERED = "tool_exhausted_then_answered"


class StructureError(ValueError):
    """A step log or record stream violates a structural invariant."""


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class Problem:
    """One question posed to the searcher.

    ``world`` is an opaque regeneration hint carried by simulated problems
    (spec parameters plus instance seed); external problems leave it None.
    """

    id: str
    prompt: str
    gold_answer: str | None = None
    source: Source = Source.EXTERNAL
    world: dict | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("Problem.id must be nonempty")
        if not self.prompt:
            raise ValueError("Problem.prompt must be nonempty")

    def to_record(self) -> dict:
        rec = {
            "kind": "problem",
            "id": self.id,
            "prompt": self.prompt,
            "gold_answer": self.gold_answer,
            "source": self.source.value,
        }
        if self.world is not None:
            rec["world"] = self.world
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Problem":
        return cls(
            id=rec["id"],
            prompt=rec["prompt"],
            gold_answer=rec.get("gold_answer"),
            source=Source(rec["source"]),
            world=rec.get("world"),
        )


@dataclass(frozen=True)
class Step:
    """One entry in a trajectory's step log. ``timestamp`` is a logical tick."""

    index: int
    kind: StepKind
    content: str
    timestamp: int
    tool_query: tuple[str, str] | None = None

    def __post_init__(self) -> None:
        if (self.tool_query is not None) != (self.kind is StepKind.TOOL_CALL):
            raise ValueError("Step.tool_query must be present iff kind == tool_call")

    def to_record(self) -> dict:
        rec = {
            "index": self.index,
            "kind": self.kind.value,
            "content": self.content,
            "timestamp": self.timestamp,
        }
        if self.tool_query is not None:
            rec["tool_query"] = list(self.tool_query)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Step":
        tq = rec.get("tool_query")
        return cls(
            index=rec["index"],
            kind=StepKind(rec["kind"]),
            content=rec["content"],
            timestamp=rec["timestamp"],
            tool_query=tuple(tq) if tq is not None else None,
        )


def validate_steps(steps: Sequence[Step]) -> None:
    """Check ordering invariants; raises StructureError on the first violation."""
    for pos, step in enumerate(steps):
        if step.index != pos:
            raise StructureError(f"step indices must be contiguous from 0, got {step.index} at position {pos}")
        if pos > 0 and step.timestamp <= steps[pos - 1].timestamp:
            raise StructureError(f"timestamps must increase monotonically at step {pos}")
        if step.kind is StepKind.TOOL_CALL:
            nxt = steps[pos + 1] if pos + 1 < len(steps) else None
            if nxt is None or nxt.kind is not StepKind.TOOL_RESULT:
                raise StructureError(f"tool_call at step {pos} has no immediate tool_result")
        if step.kind is StepKind.TOOL_RESULT:
            prev = steps[pos - 1] if pos > 0 else None
            if prev is None or prev.kind is not StepKind.TOOL_CALL:
                raise StructureError(f"tool_result at step {pos} does not follow a tool_call")


@dataclass(frozen=True)
class Trajectory:
    problem_id: str
    seed: int
    steps: tuple[Step, ...]
    tool_calls_used: int
    forcing_rounds_applied: int
    candidate_answers: tuple[str, ...]
    final_answer: str | None
    termination: Termination

    def __post_init__(self) -> None:
        validate_steps(self.steps)
        used = sum(1 for s in self.steps if s.kind is StepKind.TOOL_CALL)
        if used != self.tool_calls_used:
            raise ValueError(f"tool_calls_used={self.tool_calls_used} but step log records {used}")
        if self.candidate_answers:
            if self.final_answer != self.candidate_answers[-1]:
                raise ValueError("final_answer must equal the last candidate answer")
        elif self.final_answer is not None:
            raise ValueError("final_answer present without any candidate answers")
        if self.forcing_rounds_applied < 0:
            raise ValueError("forcing_rounds_applied must be >= 0")

    def to_record(self) -> dict:
        return {
            "kind": "trajectory",
            "problem_id": self.problem_id,
            "seed": self.seed,
            "steps": [s.to_record() for s in self.steps],
            "tool_calls_used": self.tool_calls_used,
            "forcing_rounds_applied": self.forcing_rounds_applied,
            "candidate_answers": list(self.candidate_answers),
            "final_answer": self.final_answer,
            "termination": self.termination.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Trajectory":
        return cls(
            problem_id=rec["problem_id"],
            seed=rec["seed"],
            steps=tuple(Step.from_record(s) for s in rec["steps"]),
            tool_calls_used=rec["tool_calls_used"],
            forcing_rounds_applied=rec["forcing_rounds_applied"],
            candidate_answers=tuple(rec["candidate_answers"]),
            final_answer=rec["final_answer"],
            termination=Termination(rec["termination"]),
        )


@dataclass(frozen=True)
class ScalingPolicy:
    """Sequential-scaling knobs for one agent role.

    ``step_cap`` defaults to 4x the total tool allowance plus 8, which leaves
    room for the reasoning/result step pairs around every tool call. The cap
    must exceed twice the total allowance or the loop could starve the agent
    of the calls it was promised.
    """

    max_tool_calls: int
    forcing_rounds: int = 0
    forcing_increment: int = 0
    step_cap: int = 0
    temperature: float = 0.7

    def __post_init__(self) -> None:
        if self.max_tool_calls < 1:
            raise ValueError("max_tool_calls must be >= 1")
        if self.forcing_rounds < 0:
            raise ValueError("forcing_rounds must be >= 0")
        if self.forcing_rounds > 0 and self.forcing_increment < 1:
            raise ValueError("forcing_increment must be >= 1 when forcing_rounds > 0")
        if self.forcing_rounds == 0 and self.forcing_increment != 0:
            raise ValueError("forcing_increment requires forcing_rounds > 0")
        if self.step_cap == 0:
            object.__setattr__(self, "step_cap", 4 * self.total_allowance + 8)
        if self.step_cap <= 2 * self.total_allowance:
            raise ValueError("step_cap must exceed 2x the total tool allowance")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def total_allowance(self) -> int:
        return self.max_tool_calls + self.forcing_rounds * self.forcing_increment

    def to_record(self) -> dict:
        return {
            "max_tool_calls": self.max_tool_calls,
            "forcing_rounds": self.forcing_rounds,
            "forcing_increment": self.forcing_increment,
            "step_cap": self.step_cap,
            "temperature": self.temperature,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ScalingPolicy":
        return cls(
            max_tool_calls=rec["max_tool_calls"],
            forcing_rounds=rec.get("forcing_rounds", 0),
            forcing_increment=rec.get("forcing_increment", 0),
            step_cap=rec.get("step_cap", 0),
            temperature=rec.get("temperature", 0.7),
        )


@dataclass(frozen=True)
class VerificationRecord:
    problem_id: str
    candidate_answer: str
    score: float
    tool_calls_used: int
    seed: int
    parse_ok: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.tool_calls_used < 0:
            raise ValueError("tool_calls_used must be >= 0")

    def to_record(self) -> dict:
        return {
            "kind": "verification",
            "problem_id": self.problem_id,
            "candidate_answer": self.candidate_answer,
            "score": self.score,
            "tool_calls_used": self.tool_calls_used,
            "seed": self.seed,
            "parse_ok": self.parse_ok,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "VerificationRecord":
        return cls(
            problem_id=rec["problem_id"],
            candidate_answer=rec["candidate_answer"],
            score=rec["score"],
            tool_calls_used=rec["tool_calls_used"],
            seed=rec["seed"],
            parse_ok=rec["parse_ok"],
        )


@dataclass
class RunSet:
    """Everything one run persists. ``config`` mirrors the meta line."""

    config_digest: str
    problems: list[Problem]
    trajectories: dict[str, list[Trajectory]]
    verifications: dict[str, list[VerificationRecord]]
    created_at: str
    config: dict = field(default_factory=dict)

    def validate(self) -> None:
        known = {p.id for p in self.problems}
        if len(known) != len(self.problems):
            raise StructureError("duplicate problem ids in RunSet")
        seen: set[tuple[str, int]] = set()
        for pid, trajs in self.trajectories.items():
            if pid not in known:
                raise StructureError(f"trajectory references unknown problem {pid!r}")
            for t in trajs:
                key = (t.problem_id, t.seed)
                if key in seen:
                    raise StructureError(f"duplicate (problem_id, seed) pair {key}")
                seen.add(key)
        for pid in self.verifications:
            if pid not in known:
                raise StructureError(f"verification references unknown problem {pid!r}")

    def all_trajectories(self) -> list[Trajectory]:
        return [t for p in self.problems for t in self.trajectories.get(p.id, [])]

    def all_verifications(self) -> list[VerificationRecord]:
        return [v for p in self.problems for v in self.verifications.get(p.id, [])]

    def meta_record(self) -> dict:
        return {
            "kind": "meta",
            "config_digest": self.config_digest,
            "created_at": self.created_at,
            "config": self.config,
        }


def count_tool_calls(trajectory: Trajectory) -> int:
    """Recount tool calls from the step log itself (validates ordering first)."""
    validate_steps(trajectory.steps)
    return sum(1 for s in trajectory.steps if s.kind is StepKind.TOOL_CALL)


def total_compute(
    trajectories: Iterable[Trajectory],
    verifications: Iterable[VerificationRecord],
) -> int:
    """Combined tool-call compute proxy: searcher calls plus verifier calls."""
    return sum(t.tool_calls_used for t in trajectories) + sum(v.tool_calls_used for v in verifications)


def decode_record(rec: dict) -> object:
    kind = rec.get("kind")
    if kind == "problem":
        return Problem.from_record(rec)
    if kind == "trajectory":
        return Trajectory.from_record(rec)
    if kind == "verification":
        return VerificationRecord.from_record(rec)
    if kind == "meta":
        return rec
    raise StructureError(f"unknown record kind {kind!r}")


def dump_line(rec: dict) -> str:
    return canonical_json(rec) + "\n"


def runset_records(runset: RunSet) -> list[dict]:
    """The canonical record sequence for persistence: meta, problems, trajectories, verifications."""
    records = [runset.meta_record()]
    records.extend(p.to_record() for p in runset.problems)
    for p in runset.problems:
        records.extend(t.to_record() for t in runset.trajectories.get(p.id, []))
    for p in runset.problems:
        records.extend(v.to_record() for v in runset.verifications.get(p.id, []))
    return records


def write_runset(runset: RunSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in runset_records(runset):
            fh.write(dump_line(rec))


def read_runset(path, strict: bool = True) -> tuple[RunSet, int]:
    """Load a persisted RunSet.

    With strict=False, lines that fail to parse or decode are skipped and
    counted (the count is returned alongside the RunSet) so reports survive
    corruption; with strict=True the first bad line raises StructureError.
    """
    meta: dict | None = None
    problems: list[Problem] = []
    trajectories: dict[str, list[Trajectory]] = {}
    verifications: dict[str, list[VerificationRecord]] = {}
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = decode_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                if strict:
                    raise StructureError(f"{path}:{lineno}: bad record: {exc}") from exc
                skipped += 1
                logger.warning("%s:%d: skipping corrupt line (%s)", path, lineno, exc)
                continue
            if isinstance(obj, Problem):
                problems.append(obj)
            elif isinstance(obj, Trajectory):
                trajectories.setdefault(obj.problem_id, []).append(obj)
            elif isinstance(obj, VerificationRecord):
                verifications.setdefault(obj.problem_id, []).append(obj)
            else:
                meta = obj  # type: ignore[assignment]
    if meta is None:
        raise StructureError(f"{path}: no meta record found")
    runset = RunSet(
        config_digest=meta["config_digest"],
        problems=problems,
        trajectories=trajectories,
        verifications=verifications,
        created_at=meta["created_at"],
        config=meta.get("config", {}),
    )
    runset.validate()
    return runset, skipped


def merge_runsets(a: RunSet, b: RunSet) -> RunSet:
    """Union two runs of the same configuration (seed-disjoint by invariant)."""
    if a.config_digest != b.config_digest:
        raise StructureError("cannot merge RunSets with different config digests")
    by_id = {p.id: p for p in a.problems}
    problems = list(a.problems)
    for p in b.problems:
        if p.id not in by_id:
            problems.append(p)
        elif by_id[p.id] != p:
            raise StructureError(f"problem {p.id!r} differs between RunSets")
    trajectories = {pid: list(ts) for pid, ts in a.trajectories.items()}
    for pid, ts in b.trajectories.items():
        trajectories.setdefault(pid, []).extend(ts)
    verifications = {pid: list(vs) for pid, vs in a.verifications.items()}
    for pid, vs in b.verifications.items():
        verifications.setdefault(pid, []).extend(vs)
    merged = RunSet(
        config_digest=a.config_digest,
        problems=problems,
        trajectories=trajectories,
        verifications=verifications,
        created_at=min(a.created_at, b.created_at),
        config=a.config,
    )
    merged.validate()
    return merged
