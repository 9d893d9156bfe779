"""Answer selection and metrics over K sampled trajectories.

Selection rules: majority vote (no verifier), best-of-K (max mean verifier
score), weighted voting (max score sum per distinct answer). Metrics:
Pass@K and Maj@K over the first K trajectories per problem, plus the
cost-accuracy frontier that prices every (rule, K) point in combined tool
calls.

Answers compare by canonical form: lowercased, whitespace-collapsed,
terminal punctuation stripped. Empty canonical means the trajectory
abstained. All tie-breaks resolve toward the lowest trajectory index, so
every rule is a deterministic function of the candidate list.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Callable, Sequence

from .domain import RunSet, Problem

RULES = ("pass", "maj", "best_of_k", "weighted")
VERIFIER_RULES = ("best_of_k", "weighted")

_WS_RE = re.compile(r"\s+")
_TERMINAL_PUNCT = ".,;:!?"


def canonicalize(answer: str) -> str:
    out = _WS_RE.sub(" ", answer.strip().lower())
    return out.rstrip(_TERMINAL_PUNCT).strip()


@dataclass(frozen=True)
class Candidate:
    trajectory_index: int
    answer_raw: str
    answer_canonical: str
    score: float | None
    searcher_calls: int


def make_candidate(trajectory_index: int, answer_raw: str, score: float | None, searcher_calls: int) -> Candidate:
    return Candidate(
        trajectory_index=trajectory_index,
        answer_raw=answer_raw,
        answer_canonical=canonicalize(answer_raw),
        score=score,
        searcher_calls=searcher_calls,
    )


@dataclass(frozen=True)
class AggregationOutcome:
    rule: str
    winner_canonical: str | None
    winner_trajectory_index: int | None
    tie_broken: bool
    tally: dict[str, tuple[int, float]]


def _tally(candidates: Sequence[Candidate]) -> dict[str, tuple[int, float]]:
    out: dict[str, tuple[int, float]] = {}
    for c in candidates:
        count, total = out.get(c.answer_canonical, (0, 0.0))
        out[c.answer_canonical] = (count + 1, total + (c.score or 0.0))
    return out


def _first_index(candidates: Sequence[Candidate], canonical: str) -> int:
    return min(c.trajectory_index for c in candidates if c.answer_canonical == canonical)


def majority_vote(candidates: Sequence[Candidate]) -> AggregationOutcome:
    """Plurality winner; ties resolve to the answer seen earliest."""
    tally = _tally(candidates)
    voting = [c for c in candidates if c.answer_canonical]
    if not voting:
        return AggregationOutcome("maj", None, None, False, tally)
    counts: dict[str, int] = {}
    for c in voting:
        counts[c.answer_canonical] = counts.get(c.answer_canonical, 0) + 1
    top = max(counts.values())
    tied = [a for a, n in counts.items() if n == top]
    winner = min(tied, key=lambda a: _first_index(voting, a))
    return AggregationOutcome(
        rule="maj",
        winner_canonical=winner,
        winner_trajectory_index=_first_index(voting, winner),
        tie_broken=len(tied) > 1,
        tally=tally,
    )


def _require_scores(candidates: Sequence[Candidate], rule: str) -> None:
    for c in candidates:
        if c.answer_canonical and c.score is None:
            raise ValueError(
                f"{rule} requires verifier scores but candidate at trajectory "
                f"{c.trajectory_index} ({c.answer_raw!r}) has none"
            )


def best_of_k(candidates: Sequence[Candidate]) -> AggregationOutcome:
    """Highest-scored candidate wins outright; abstainers never win."""
    tally = _tally(candidates)
    voting = [c for c in candidates if c.answer_canonical]
    if not voting:
        return AggregationOutcome("best_of_k", None, None, False, tally)
    _require_scores(voting, "best_of_k")
    best = max(c.score for c in voting)  # type: ignore[type-var]
    tied = [c for c in voting if c.score == best]
    winner = min(tied, key=lambda c: c.trajectory_index)
    return AggregationOutcome(
        rule="best_of_k",
        winner_canonical=winner.answer_canonical,
        winner_trajectory_index=winner.trajectory_index,
        tie_broken=len(tied) > 1,
        tally=tally,
    )


def weighted_vote(candidates: Sequence[Candidate]) -> AggregationOutcome:
    """Max score-sum per distinct answer; equal positive scores reduce to
    majority, and an all-zero score table falls back to majority outright."""
    tally = _tally(candidates)
    voting = [c for c in candidates if c.answer_canonical]
    if not voting:
        return AggregationOutcome("weighted", None, None, False, tally)
    _require_scores(voting, "weighted")
    sums: dict[str, float] = {}
    for c in voting:
        sums[c.answer_canonical] = sums.get(c.answer_canonical, 0.0) + (c.score or 0.0)
    if all(total == 0.0 for total in sums.values()):
        mv = majority_vote(candidates)
        return AggregationOutcome("weighted", mv.winner_canonical, mv.winner_trajectory_index, True, tally)
    top = max(sums.values())
    tied = [a for a, total in sums.items() if total == top]
    winner = min(tied, key=lambda a: _first_index(voting, a))
    return AggregationOutcome(
        rule="weighted",
        winner_canonical=winner,
        winner_trajectory_index=_first_index(voting, winner),
        tie_broken=len(tied) > 1,
        tally=tally,
    )


def pass_at_k(per_problem_flags: Sequence[Sequence[bool]], k: int) -> float:
    """Fraction of problems with any correct answer among the first k flags."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for i, flags in enumerate(per_problem_flags):
        if len(flags) < k:
            raise ValueError(f"problem {i} has {len(flags)} trajectories, fewer than k={k}")
    if not per_problem_flags:
        return 0.0
    return sum(1 for flags in per_problem_flags if any(flags[:k])) / len(per_problem_flags)


def maj_at_k(per_problem_candidates: Sequence[Sequence[Candidate]], k: int, golds: Sequence[str]) -> float:
    """Fraction of problems where the first-k majority answer is the gold one."""
    if len(per_problem_candidates) != len(golds):
        raise ValueError("candidate lists and golds must align")
    if k < 1:
        raise ValueError("k must be >= 1")
    correct = 0
    for cands, gold in zip(per_problem_candidates, golds):
        if len(cands) < k:
            raise ValueError(f"fewer than k={k} candidates for a problem")
        outcome = majority_vote(cands[:k])
        if outcome.winner_canonical is not None and outcome.winner_canonical == canonicalize(gold):
            correct += 1
    return correct / len(per_problem_candidates) if per_problem_candidates else 0.0


def rule_accuracy(
    per_problem_candidates: Sequence[Sequence[Candidate]],
    golds: Sequence[str],
    rule: str,
    k: int,
) -> float:
    """Accuracy of one selection rule applied to the first k candidates."""
    if rule == "pass":
        flags = [
            [c.answer_canonical == canonicalize(gold) and bool(c.answer_canonical) for c in cands]
            for cands, gold in zip(per_problem_candidates, golds)
        ]
        return pass_at_k(flags, k)
    if rule == "maj":
        return maj_at_k(per_problem_candidates, k, golds)
    if rule not in ("best_of_k", "weighted"):
        raise ValueError(f"unknown rule {rule!r}")
    pick: Callable[[Sequence[Candidate]], AggregationOutcome] = best_of_k if rule == "best_of_k" else weighted_vote
    correct = 0
    for cands, gold in zip(per_problem_candidates, golds):
        if len(cands) < k:
            raise ValueError(f"fewer than k={k} candidates for a problem")
        outcome = pick(cands[:k])
        if outcome.winner_canonical is not None and outcome.winner_canonical == canonicalize(gold):
            correct += 1
    return correct / len(per_problem_candidates) if per_problem_candidates else 0.0


# --- runset views and the cost-accuracy frontier ----------------------------

def scores_by_canonical(runset: RunSet, problem_id: str) -> dict[str, float]:
    """Mean verifier score per canonical answer for one problem."""
    sums: dict[str, tuple[int, float]] = {}
    for rec in runset.verifications.get(problem_id, []):
        canon = canonicalize(rec.candidate_answer)
        n, total = sums.get(canon, (0, 0.0))
        sums[canon] = (n + 1, total + rec.score)
    return {canon: total / n for canon, (n, total) in sums.items()}


def candidates_from_runset(runset: RunSet, problem: Problem) -> list[Candidate]:
    score_map = scores_by_canonical(runset, problem.id)
    out = []
    for idx, traj in enumerate(runset.trajectories.get(problem.id, [])):
        raw = traj.final_answer or ""
        canon = canonicalize(raw)
        out.append(
            Candidate(
                trajectory_index=idx,
                answer_raw=raw,
                answer_canonical=canon,
                score=score_map.get(canon),
                searcher_calls=traj.tool_calls_used,
            )
        )
    return out


def k_ladder(k: int) -> list[int]:
    ladder = []
    step = 1
    while step < k:
        ladder.append(step)
        step *= 2
    ladder.append(k)
    return ladder


@dataclass(frozen=True)
class FrontierPoint:
    label: str
    rule: str
    k: int
    total_tool_calls: int
    accuracy: float


def frontier(entries: Sequence[tuple[str, RunSet]]) -> list[FrontierPoint]:
    """One point per (runset, rule, K): combined compute vs accuracy.

    Verifier-rule points charge every verification attached to a candidate
    answer appearing among the first K trajectories, so the x axis reflects
    what selection actually cost, not just searching.
    """
    points: list[FrontierPoint] = []
    for label, runset in entries:
        rules = [r for r in runset.config.get("rules", ["pass"]) if r in RULES]
        k = runset.config.get("k") or max(
            (len(ts) for ts in runset.trajectories.values()), default=0
        )
        if k < 1:
            continue
        golds = []
        per_problem = []
        for problem in runset.problems:
            if problem.gold_answer is None:
                raise ValueError(f"frontier requires gold answers; {problem.id!r} has none")
            golds.append(problem.gold_answer)
            per_problem.append(candidates_from_runset(runset, problem))
        for rule in rules:
            for kk in k_ladder(k):
                searcher = sum(
                    c.searcher_calls for cands in per_problem for c in cands[:kk]
                )
                verifier_calls = 0
                if rule in VERIFIER_RULES:
                    for problem, cands in zip(runset.problems, per_problem):
                        canons = {c.answer_canonical for c in cands[:kk] if c.answer_canonical}
                        verifier_calls += sum(
                            rec.tool_calls_used
                            for rec in runset.verifications.get(problem.id, [])
                            if canonicalize(rec.candidate_answer) in canons
                        )
                accuracy = rule_accuracy(per_problem, golds, rule, kk)
                points.append(
                    FrontierPoint(
                        label=f"{label}:{rule}@{kk}",
                        rule=rule,
                        k=kk,
                        total_tool_calls=searcher + verifier_calls,
                        accuracy=accuracy,
                    )
                )
    points.sort(key=lambda p: (p.total_tool_calls, p.label))
    return points


def write_frontier_csv(points: Sequence[FrontierPoint], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "rule", "k", "total_tool_calls", "accuracy"])
        for p in points:
            writer.writerow([p.label, p.rule, p.k, p.total_tool_calls, f"{p.accuracy:.6f}"])
