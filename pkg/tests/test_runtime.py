import pytest

from searchscale.domain import ScalingPolicy, StepKind, Termination
from searchscale.gateway import (
    BackendConfig,
    BackendError,
    Role,
    ScriptedBehavior,
    build_backend,
    compose_final_answer,
    compose_tool_call,
)
from searchscale.runtime import (
    BUDGET_NOTICE_TEXT,
    CORRECTIVE_TEXT,
    KICKOFF_TEXT,
    PromptTemplate,
    default_template,
    load_template,
    run_trajectory,
    sample_parallel,
)
from searchscale.simworld import SimWorldProvider, WorldSpec, generate_instance

from conftest import EASY_SPEC, make_setup

FORCING_OK = "Granted {increment} more calls; explore alternative solution paths."


def turn_behavior(*replies, repeat_last=True):
    """Scripted behavior that answers by assistant-turn number."""

    def rule(messages, seed):
        turn = sum(1 for m in messages if m.role is Role.ASSISTANT)
        if turn < len(replies):
            return replies[turn]
        return replies[-1] if repeat_last else None

    return ScriptedBehavior(rule=rule)


def scripted(*replies, **kwargs):
    return build_backend(BackendConfig(kind="scripted"), turn_behavior(*replies, **kwargs))


def null_provider():
    class Null:
        def search(self, query, intent, rng):
            return [("s", "nothing of note")]

    return Null()


def problem():
    from searchscale.domain import Problem, Source

    return Problem(id="rt-1", prompt="Which entity satisfies: a0 = v0?", gold_answer="e0", source=Source.SIMULATED)


def test_template_placeholder_validation():
    with pytest.raises(ValueError):
        PromptTemplate(role="searcher", body="no placeholders", forcing_message=FORCING_OK)
    with pytest.raises(ValueError):
        PromptTemplate(role="judge", body="{max_tool_calls} {question}", forcing_message=FORCING_OK)
    with pytest.raises(ValueError):
        PromptTemplate(
            role="verifier", body="{max_tool_calls} {question}", forcing_message=FORCING_OK
        )  # verifier needs {candidate_answer}
    with pytest.raises(ValueError):
        PromptTemplate(role="searcher", body="{max_tool_calls} {question}", forcing_message="keep going")
    tpl = PromptTemplate(role="searcher", body="{max_tool_calls} {question}", forcing_message=FORCING_OK)
    assert tpl.render(question="Q?", max_tool_calls=5) == "5 Q?"
    assert tpl.render_forcing(3) == "Granted 3 more calls; explore alternative solution paths."


def test_default_templates_load_and_render():
    searcher = default_template("searcher")
    text = searcher.render(question="Which entity?", max_tool_calls=9)
    assert "Which entity?" in text
    assert "9" in text
    verifier = default_template("verifier")
    vtext = verifier.render(question="Q?", max_tool_calls=3, candidate_answer="e14")
    assert "Candidate answer: e14" in vtext
    with pytest.raises(ValueError):
        verifier.render(question="Q?", max_tool_calls=3)  # candidate required


def test_template_override_from_file(tmp_path):
    body = tmp_path / "body.txt"
    body.write_text("Custom. Budget {max_tool_calls}. Task: {question}", encoding="utf-8")
    tpl = load_template("searcher", body_path=body)
    assert tpl.render(question="Q?", max_tool_calls=2).startswith("Custom.")
    assert "alternative solution paths" in tpl.forcing_message  # default forcing kept


def test_happy_path_step_log_and_conversation_shape():
    backend = scripted(
        compose_tool_call("find it", "looking"),
        compose_final_answer("e0"),
    )
    t = run_trajectory(problem(), ScalingPolicy(max_tool_calls=3), backend, null_provider(), seed=1)
    assert [s.kind for s in t.steps] == [StepKind.TOOL_CALL, StepKind.TOOL_RESULT, StepKind.FINAL_ANSWER]
    assert [s.timestamp for s in t.steps] == [0, 1, 2]
    assert t.steps[0].tool_query == ("find it", "looking")
    assert t.tool_calls_used == 1
    assert t.termination is Termination.ANSWERED
    assert t.candidate_answers == ("e0",)


def test_plain_reasoning_becomes_a_step():
    backend = scripted("Let me think about this.", compose_final_answer("e0"))
    t = run_trajectory(problem(), ScalingPolicy(max_tool_calls=2), backend, null_provider(), seed=1)
    assert [s.kind for s in t.steps] == [StepKind.REASONING, StepKind.FINAL_ANSWER]
    assert t.tool_calls_used == 0


def test_malformed_and_ambiguous_actions_get_corrective_nudges():
    backend = scripted(
        compose_final_answer("a") + compose_final_answer("b"),  # ambiguous
        "```tool_call\nnot json\n```",  # malformed
        compose_final_answer("e0"),
    )
    t = run_trajectory(problem(), ScalingPolicy(max_tool_calls=2), backend, null_provider(), seed=1)
    assert [s.kind for s in t.steps] == [StepKind.REASONING, StepKind.REASONING, StepKind.FINAL_ANSWER]
    assert t.tool_calls_used == 0  # never reached the meter
    assert t.termination is Termination.ANSWERED


def test_budget_forcing_grants_and_reenters_the_loop():
    problem_, instance, provider, backend = make_setup(EASY_SPEC)
    policy = ScalingPolicy(max_tool_calls=2, forcing_rounds=1, forcing_increment=5)
    t = run_trajectory(problem_, policy, backend, provider, seed=9)
    kinds = [s.kind for s in t.steps]
    assert StepKind.FORCING_INJECTION in kinds
    assert kinds.count(StepKind.FINAL_ANSWER) == 2  # provisional, then terminal
    assert t.forcing_rounds_applied == 1
    assert len(t.candidate_answers) == 2
    assert t.final_answer == t.candidate_answers[-1]
    # the forcing text lands in the transcript as a user message after the
    # provisional answer, and the grant extends the meter past the original cap
    assert t.tool_calls_used <= policy.total_allowance
    injections = [s for s in t.steps if s.kind is StepKind.FORCING_INJECTION]
    assert "alternative solution paths" in injections[0].content
    assert "5" in injections[0].content


def test_budget_exhaustion_emits_notice_and_marks_termination():
    backend = scripted(
        compose_tool_call("one", "i"),
        compose_tool_call("two", "i"),  # exhausted here
        compose_final_answer("best guess"),
    )
    t = run_trajectory(problem(), ScalingPolicy(max_tool_calls=1), backend, null_provider(), seed=1)
    kinds = [s.kind for s in t.steps]
    assert kinds == [
        StepKind.TOOL_CALL,
        StepKind.TOOL_RESULT,
        StepKind.REASONING,  # the starved attempt, preserved but unmetered
        StepKind.BUDGET_NOTICE,
        StepKind.FINAL_ANSWER,
    ]
    assert t.tool_calls_used == 1
    assert t.termination is Termination.TOOL_EXHAUSTED_THEN_ANSWERED
    notice = [s for s in t.steps if s.kind is StepKind.BUDGET_NOTICE][0]
    assert notice.content == BUDGET_NOTICE_TEXT


def test_step_cap_stops_filibuster():
    backend = scripted("thinking...")  # never acts
    policy = ScalingPolicy(max_tool_calls=2, step_cap=12)
    t = run_trajectory(problem(), policy, backend, null_provider(), seed=1)
    assert t.termination is Termination.STEP_CAP
    assert len(t.steps) == 12
    assert all(s.kind is StepKind.REASONING for s in t.steps)
    assert t.final_answer is None


def test_step_cap_never_splits_tool_call_pairs():
    backend = scripted(compose_tool_call("again", "i"))  # tools forever
    policy = ScalingPolicy(max_tool_calls=2, step_cap=5)
    t = run_trajectory(problem(), policy, backend, null_provider(), seed=1)
    assert t.termination is Termination.STEP_CAP
    # 2 call/result pairs fit in 5 steps; the third call would split
    assert [s.kind for s in t.steps] == [
        StepKind.TOOL_CALL,
        StepKind.TOOL_RESULT,
        StepKind.TOOL_CALL,
        StepKind.TOOL_RESULT,
    ]
    assert t.tool_calls_used == 2


def test_terminal_answer_may_land_exactly_on_the_cap():
    backend = scripted(
        compose_tool_call("one", "i"),
        compose_final_answer("e0"),
    )
    policy = ScalingPolicy(max_tool_calls=1, step_cap=3)
    t = run_trajectory(problem(), policy, backend, null_provider(), seed=1)
    assert t.termination is Termination.ANSWERED
    assert len(t.steps) == 3


def test_backend_errors_terminate_without_raising():
    def explode(messages, seed):
        raise BackendError("gone", attempts=4)

    backend = build_backend(BackendConfig(kind="scripted"), ScriptedBehavior(rule=explode))
    t = run_trajectory(problem(), ScalingPolicy(max_tool_calls=2), backend, null_provider(), seed=1)
    assert t.termination is Termination.BACKEND_ERROR
    assert t.steps == ()
    assert t.final_answer is None


def test_corrective_message_visible_to_backend():
    seen = []

    def rule(messages, seed):
        seen.append(messages[-1].content)
        turn = sum(1 for m in messages if m.role is Role.ASSISTANT)
        if turn == 0:
            return "```tool_call\n{bad\n```"
        return compose_final_answer("x")

    backend = build_backend(BackendConfig(kind="scripted"), ScriptedBehavior(rule=rule))
    run_trajectory(problem(), ScalingPolicy(max_tool_calls=2), backend, null_provider(), seed=1)
    assert seen[0] == KICKOFF_TEXT
    assert seen[1] == CORRECTIVE_TEXT


def test_sample_parallel_seeds_and_worker_independence():
    problem_, instance, provider, backend = make_setup(EASY_SPEC)
    policy = ScalingPolicy(max_tool_calls=6)
    serial = sample_parallel(problem_, policy, backend, provider, k=5, base_seed=40, worker_cap=1)
    pooled = sample_parallel(problem_, policy, backend, provider, k=5, base_seed=40, worker_cap=4)
    assert [t.seed for t in serial] == [41, 42, 43, 44, 45]
    assert [t.to_record() for t in serial] == [t.to_record() for t in pooled]
    again = sample_parallel(problem_, policy, backend, provider, k=5, base_seed=40, worker_cap=1)
    assert [t.to_record() for t in again] == [t.to_record() for t in serial]
    with pytest.raises(ValueError):
        sample_parallel(problem_, policy, backend, provider, k=0, base_seed=40)


def test_trajectory_is_pure_function_of_seed():
    spec = WorldSpec(n_entities=25, n_attributes=5, n_constraints=3, reveal_prob=0.4, seed=3)
    problem_, instance, provider, backend = make_setup(spec)
    policy = ScalingPolicy(max_tool_calls=12)
    a = run_trajectory(problem_, policy, backend, provider, seed=500)
    b = run_trajectory(problem_, policy, backend, provider, seed=500)
    assert a.to_record() == b.to_record()
    c = run_trajectory(problem_, policy, backend, provider, seed=501)
    assert c.seed != a.seed
