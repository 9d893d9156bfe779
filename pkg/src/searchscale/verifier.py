"""Verification: re-run the agent loop in verifier dress and read a score.

A verifier is the same loop as the searcher with a different system prompt;
its final answer must carry a "CONFIDENCE: <decimal>" line. Checking a named
candidate is structurally cheaper than searching for it, which is the
asymmetry the selection rules exploit. Scores from repeated samples are
averaged, cutting score variance by the sample count.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .domain import Problem, ScalingPolicy, VerificationRecord
from .gateway import Backend
from .runtime import PromptTemplate, default_template, run_trajectory

_CONFIDENCE_RE = re.compile(r"CONFIDENCE:\s*([-+]?(?:\d+\.?\d*|\.\d+))")


@dataclass(frozen=True)
class VerifierPolicy:
    scaling: ScalingPolicy
    samples: int = 1
    fallback_score: float = 0.0

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0.0 <= self.fallback_score <= 1.0:
            raise ValueError("fallback_score must lie in [0, 1]")

    def to_record(self) -> dict:
        return {
            "scaling": self.scaling.to_record(),
            "samples": self.samples,
            "fallback_score": self.fallback_score,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "VerifierPolicy":
        return cls(
            scaling=ScalingPolicy.from_record(rec["scaling"]),
            samples=rec.get("samples", 1),
            fallback_score=rec.get("fallback_score", 0.0),
        )


def parse_confidence(text: str, fallback: float = 0.0) -> tuple[float, bool]:
    """First CONFIDENCE figure in the text, clamped to [0, 1].

    Returns (fallback, False) when no score is present; the fallback
    substitutes for the sample rather than dropping it, so sample counts
    stay honest in the compute accounting.
    """
    m = _CONFIDENCE_RE.search(text)
    if not m:
        return fallback, False
    return min(1.0, max(0.0, float(m.group(1)))), True


def verify_candidate(
    problem: Problem,
    candidate: str,
    policy: VerifierPolicy,
    backend: Backend,
    provider,
    base_seed: int,
    template: PromptTemplate | None = None,
) -> tuple[list[VerificationRecord], float]:
    """Score one candidate with ``policy.samples`` independent verifier runs.

    Sample i uses seed base_seed + i. A run that yields no parseable score
    (including backend_error terminations) contributes the fallback score
    with parse_ok = False.
    """
    if not candidate:
        raise ValueError("candidate must be nonempty")
    template = template or default_template("verifier")
    records: list[VerificationRecord] = []
    for i in range(1, policy.samples + 1):
        seed = base_seed + i
        trajectory = run_trajectory(
            problem,
            policy.scaling,
            backend,
            provider,
            seed,
            template=template,
            candidate_answer=candidate,
        )
        score, parse_ok = parse_confidence(trajectory.final_answer or "", policy.fallback_score)
        records.append(
            VerificationRecord(
                problem_id=problem.id,
                candidate_answer=candidate,
                score=score,
                tool_calls_used=trajectory.tool_calls_used,
                seed=seed,
                parse_ok=parse_ok,
            )
        )
    mean_score = sum(r.score for r in records) / len(records)
    return records, mean_score
