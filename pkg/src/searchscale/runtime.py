"""The agent loop: reason, act, observe, under a tool budget and a step cap.

One loop serves searcher and verifier roles; only the prompt template
differs. The loop owns the sequential-scaling mechanics:

- the advertised tool budget (the prompt states it, the search tool enforces
  it, exhausted attempts produce a budget notice instead of results);
- budget forcing (after a final answer, while forcing rounds remain, a user
  message grants more budget and asks for alternative solution paths);
- the step cap, a hard liveness bound that no backend can filibuster past.

Trajectories are pure functions of (problem, policy, backend, provider,
seed), which is what makes parallel sampling reproducible under any worker
count.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .domain import ScalingPolicy, Step, StepKind, Termination, Trajectory, Problem, derive_seed
from .gateway import (
    AmbiguousAction,
    Backend,
    BackendError,
    ChatMessage,
    FinalAnswerAction,
    MalformedAction,
    ProtocolError,
    Role,
    ToolCallAction,
    parse_tool_invocation,
)
from .search_tool import BudgetState, ToolRequest, ToolResponse, ToolStatus, grant_budget, invoke

KICKOFF_TEXT = "Proceed with the task."
BUDGET_NOTICE_TEXT = (
    "Search budget exhausted: no further results will be provided. "
    "Give your best final answer from the information gathered so far."
)
CORRECTIVE_TEXT = "Invalid action: emit exactly one directive block (tool_call or final_answer)."

_PLACEHOLDERS = ("{max_tool_calls}", "{question}", "{candidate_answer}")
_FORCING_PHRASE = "alternative solution paths"


@dataclass(frozen=True)
class PromptTemplate:
    """System-prompt body plus the forcing message, with placeholder checks."""

    role: str
    body: str
    forcing_message: str

    def __post_init__(self) -> None:
        if self.role not in ("searcher", "verifier"):
            raise ValueError(f"template role must be 'searcher' or 'verifier', got {self.role!r}")
        for ph in ("{max_tool_calls}", "{question}"):
            if ph not in self.body:
                raise ValueError(f"{self.role} template body must contain {ph}")
        if self.role == "verifier" and "{candidate_answer}" not in self.body:
            raise ValueError("verifier template body must contain {candidate_answer}")
        if "{increment}" not in self.forcing_message:
            raise ValueError("forcing message must contain {increment}")
        if _FORCING_PHRASE not in self.forcing_message:
            raise ValueError(f"forcing message must ask for {_FORCING_PHRASE!r}")

    def render(self, question: str, max_tool_calls: int, candidate_answer: str | None = None) -> str:
        out = self.body.replace("{max_tool_calls}", str(max_tool_calls)).replace("{question}", question)
        if self.role == "verifier":
            if candidate_answer is None:
                raise ValueError("verifier template requires a candidate_answer")
            out = out.replace("{candidate_answer}", candidate_answer)
        for ph in _PLACEHOLDERS:
            if ph in out:
                raise ValueError(f"unresolved placeholder {ph} after render")
        return out

    def render_forcing(self, increment: int) -> str:
        return self.forcing_message.replace("{increment}", str(increment))


def _read_asset(name: str) -> str:
    return resources.files("searchscale").joinpath("prompts").joinpath(name).read_text(encoding="utf-8")


def load_template(role: str, body_path=None, forcing_path=None) -> PromptTemplate:
    """Load a template from the packaged assets, overridable by file paths."""
    if body_path is not None:
        body = open(body_path, "r", encoding="utf-8").read()
    else:
        body = _read_asset(f"{role}.txt")
    if forcing_path is not None:
        forcing = open(forcing_path, "r", encoding="utf-8").read()
    else:
        forcing = _read_asset("forcing.txt")
    return PromptTemplate(role=role, body=body, forcing_message=forcing)


@lru_cache(maxsize=None)
def default_template(role: str) -> PromptTemplate:
    return load_template(role)


@dataclass
class LoopState:
    """Working state of one rollout; becomes a Trajectory at termination."""

    messages: list[ChatMessage]
    budget: BudgetState
    steps: list[Step] = field(default_factory=list)
    forcing_rounds_used: int = 0
    candidate_answers: list[str] = field(default_factory=list)


class _StepCapReached(Exception):
    pass


def render_findings(response: ToolResponse) -> str:
    if response.status is ToolStatus.PROVIDER_ERROR:
        return (
            f"Search provider error: the call failed and still consumed budget "
            f"({response.calls_remaining} calls remaining)."
        )
    lines = [f"Search results ({response.calls_remaining} calls remaining):"]
    lines.extend(f"- [{sid}] {snippet}" for sid, snippet in response.findings)
    return "\n".join(lines)


def run_trajectory(
    problem: Problem,
    policy: ScalingPolicy,
    backend: Backend,
    provider,
    seed: int,
    template: PromptTemplate | None = None,
    candidate_answer: str | None = None,
) -> Trajectory:
    """Run one rollout to termination. Never raises for backend failures;
    those terminate the trajectory with termination = backend_error and the
    partial step log preserved."""
    template = template or default_template("searcher")
    system_text = template.render(
        question=problem.prompt,
        max_tool_calls=policy.max_tool_calls,
        candidate_answer=candidate_answer,
    )
    state = LoopState(
        messages=[ChatMessage(Role.SYSTEM, system_text), ChatMessage(Role.USER, KICKOFF_TEXT)],
        budget=BudgetState(initial=policy.max_tool_calls),
    )
    provider_rng = random.Random(derive_seed(seed, "provider"))
    exhausted_since_grant = False
    ordinal = 0
    termination = Termination.STEP_CAP

    def emit(kind: StepKind, content: str, tool_query: tuple[str, str] | None = None, terminal: bool = False) -> None:
        idx = len(state.steps)
        state.steps.append(Step(index=idx, kind=kind, content=content, timestamp=idx, tool_query=tool_query))
        if not terminal and len(state.steps) >= policy.step_cap:
            raise _StepCapReached()

    try:
        while len(state.steps) < policy.step_cap:
            reply = backend.complete(state.messages, seed)
            state.messages.append(reply)
            try:
                action = parse_tool_invocation(reply)
            except (AmbiguousAction, MalformedAction):
                emit(StepKind.REASONING, reply.content)
                state.messages.append(ChatMessage(Role.TOOL, CORRECTIVE_TEXT))
                continue
            if isinstance(action, ToolCallAction):
                if len(state.steps) + 2 > policy.step_cap:
                    raise _StepCapReached()
                ordinal += 1
                request = ToolRequest(
                    query=action.query,
                    intent=action.intent,
                    trajectory_id=f"{problem.id}#{seed}",
                    call_ordinal=ordinal,
                )
                response = invoke(request, state.budget, provider, provider_rng)
                if response.status is ToolStatus.BUDGET_EXHAUSTED:
                    # never metered, never reached the provider; the attempt
                    # stays in the log as reasoning plus a budget notice
                    exhausted_since_grant = True
                    emit(StepKind.REASONING, reply.content)
                    emit(StepKind.BUDGET_NOTICE, BUDGET_NOTICE_TEXT)
                    state.messages.append(ChatMessage(Role.TOOL, BUDGET_NOTICE_TEXT))
                else:
                    text = render_findings(response)
                    emit(StepKind.TOOL_CALL, reply.content, tool_query=(action.query, action.intent))
                    emit(StepKind.TOOL_RESULT, text)
                    state.messages.append(ChatMessage(Role.TOOL, text))
            elif isinstance(action, FinalAnswerAction):
                state.candidate_answers.append(action.text)
                if state.forcing_rounds_used < policy.forcing_rounds:
                    emit(StepKind.FINAL_ANSWER, reply.content)
                    state.forcing_rounds_used += 1
                    grant_budget(state.budget, policy.forcing_increment)
                    forcing_text = template.render_forcing(policy.forcing_increment)
                    emit(StepKind.FORCING_INJECTION, forcing_text)
                    state.messages.append(ChatMessage(Role.USER, forcing_text))
                    exhausted_since_grant = False
                else:
                    emit(StepKind.FINAL_ANSWER, reply.content, terminal=True)
                    termination = (
                        Termination.TOOL_EXHAUSTED_THEN_ANSWERED
                        if exhausted_since_grant
                        else Termination.ANSWERED
                    )
                    break
            else:
                emit(StepKind.REASONING, reply.content)
    except _StepCapReached:
        termination = Termination.STEP_CAP
    except (BackendError, ProtocolError):
        termination = Termination.BACKEND_ERROR

    if not state.budget.conserved():
        raise RuntimeError(f"budget conservation violated for {problem.id}#{seed}")
    return Trajectory(
        problem_id=problem.id,
        seed=seed,
        steps=tuple(state.steps),
        tool_calls_used=state.budget.consumed,
        forcing_rounds_applied=state.forcing_rounds_used,
        candidate_answers=tuple(state.candidate_answers),
        final_answer=state.candidate_answers[-1] if state.candidate_answers else None,
        termination=termination,
    )


def sample_parallel(
    problem: Problem,
    policy: ScalingPolicy,
    backend: Backend,
    provider,
    k: int,
    base_seed: int,
    worker_cap: int = 1,
    template: PromptTemplate | None = None,
) -> list[Trajectory]:
    """K independent trajectories; trajectory i runs with seed base_seed + i
    (1-based). Output order and content are independent of worker_cap."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seeds = [base_seed + i for i in range(1, k + 1)]
    if worker_cap <= 1:
        return [run_trajectory(problem, policy, backend, provider, s, template) for s in seeds]
    with ThreadPoolExecutor(max_workers=min(worker_cap, k)) as pool:
        futures = [pool.submit(run_trajectory, problem, policy, backend, provider, s, template) for s in seeds]
        return [f.result() for f in futures]
