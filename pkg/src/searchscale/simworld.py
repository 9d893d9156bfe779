"""Closed synthetic search world with a built-in solve/verify asymmetry.

A world is an entity x attribute fact table. Each instance poses a
constraint-conjunction question ("Which entity satisfies: a2 = v3, a4 = v0,
a5 = v1?") with exactly one satisfying entity. Two query grammars exist:

- forward: "which entity has a2 = v3?" reveals each matching entity only
  with probability ``reveal_prob``, so finding the answer takes repeated
  probing from multiple directions;
- check: "does e17 have a2 = v3?" answers a concrete fact deterministically.

Solving therefore costs many forward calls while verifying a named candidate
costs exactly one check per constraint. The asymmetry is a property of the
world, not an assumption wired into any agent.

The scripted searcher and verifier here are decision tables for the model
gateway: they run through the production agent loop like any backend, read
only the conversation, and derive all randomness from the trajectory seed.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .domain import Problem, Source, derive_seed
from .gateway import ChatMessage, Role, ScriptedBehavior, compose_final_answer, compose_tool_call

VALUES_PER_ATTRIBUTE = 5

DEFAULT_ENTITIES = 50
DEFAULT_ATTRIBUTES = 6
DEFAULT_CONSTRAINTS = 3
DEFAULT_REVEAL_PROB = 0.3

_GENERATION_ATTEMPTS = 1000


class GenerationFailed(RuntimeError):
    """No instance with a unique satisfying entity within the attempt budget."""


@dataclass(frozen=True)
class WorldSpec:
    n_entities: int = DEFAULT_ENTITIES
    n_attributes: int = DEFAULT_ATTRIBUTES
    n_constraints: int = DEFAULT_CONSTRAINTS
    reveal_prob: float = DEFAULT_REVEAL_PROB
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_entities < 1:
            raise ValueError("n_entities must be >= 1")
        if self.n_attributes < 1:
            raise ValueError("n_attributes must be >= 1")
        if self.n_constraints < 2:
            raise ValueError("n_constraints must be >= 2")
        if self.n_constraints > self.n_attributes:
            raise ValueError("n_constraints cannot exceed n_attributes")
        if not 0.0 < self.reveal_prob <= 1.0:
            raise ValueError("reveal_prob must lie in (0, 1]")

    def to_record(self) -> dict:
        return {
            "n_entities": self.n_entities,
            "n_attributes": self.n_attributes,
            "n_constraints": self.n_constraints,
            "reveal_prob": self.reveal_prob,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "WorldSpec":
        return cls(
            n_entities=rec.get("n_entities", DEFAULT_ENTITIES),
            n_attributes=rec.get("n_attributes", DEFAULT_ATTRIBUTES),
            n_constraints=rec.get("n_constraints", DEFAULT_CONSTRAINTS),
            reveal_prob=rec.get("reveal_prob", DEFAULT_REVEAL_PROB),
            seed=rec.get("seed", 0),
        )


@dataclass(frozen=True)
class WorldInstance:
    spec: WorldSpec
    fact_table: Mapping[str, Mapping[str, str]]
    constraints: tuple[tuple[str, str], ...]
    question: str
    answer_entity: str


def generate_instance(spec: WorldSpec) -> WorldInstance:
    """Deterministically sample a world whose question has a unique answer.

    Rejection-samples whole instances; raises GenerationFailed after 1000
    attempts (tight specs can make uniqueness improbable).
    """
    rng = random.Random(derive_seed(spec.seed, "world"))
    entities = [f"e{i}" for i in range(spec.n_entities)]
    attributes = [f"a{j}" for j in range(spec.n_attributes)]
    for _ in range(_GENERATION_ATTEMPTS):
        table = {
            e: {a: f"v{rng.randrange(VALUES_PER_ATTRIBUTE)}" for a in attributes}
            for e in entities
        }
        answer = entities[rng.randrange(spec.n_entities)]
        chosen = rng.sample(attributes, spec.n_constraints)
        constraints = tuple((a, table[answer][a]) for a in chosen)
        satisfiers = [e for e in entities if all(table[e][a] == v for a, v in constraints)]
        if satisfiers == [answer]:
            question = "Which entity satisfies: " + ", ".join(f"{a} = {v}" for a, v in constraints) + "?"
            return WorldInstance(
                spec=spec,
                fact_table=table,
                constraints=constraints,
                question=question,
                answer_entity=answer,
            )
    raise GenerationFailed(f"no unique-answer instance within {_GENERATION_ATTEMPTS} attempts for {spec}")


# --- query grammars ---------------------------------------------------------

_FORWARD_RE = re.compile(r"^\s*which entity has\s+(\S+)\s*=\s*(\S+?)\s*\?\s*$", re.IGNORECASE)
_CHECK_RE = re.compile(r"^\s*does\s+(\S+)\s+have\s+(\S+)\s*=\s*(\S+?)\s*\?\s*$", re.IGNORECASE)
_FACT_RE = re.compile(r"\b(e\d+) has (a\d+) = (v\d+)\b")
_CHECK_RESULT_RE = re.compile(r"\b(yes|no), (\S+)\.(\S+) = (\S+)\b")

NO_RESULTS_SNIPPET = "no results"


def forward_query(attribute: str, value: str) -> str:
    return f"which entity has {attribute} = {value}?"


def check_query(entity: str, attribute: str, value: str) -> str:
    return f"does {entity} have {attribute} = {value}?"


def answer_query(
    instance: WorldInstance,
    query: str,
    intent: str,
    rng: random.Random,
) -> list[tuple[str, str]]:
    """Resolve one query against the fact table.

    Forward queries draw one reveal-probability sample per matching entity
    (in entity order) so the draw stream is deterministic given the rng
    state. Check queries never consume randomness. Anything unparseable
    gets the "no results" snippet rather than an error: a search box does
    not crash on a bad query.
    """
    m = _CHECK_RE.match(query)
    if m:
        entity, attribute, value = m.groups()
        facts = instance.fact_table.get(entity, {})
        verdict = "yes" if facts.get(attribute) == value else "no"
        return [(f"sim:check:{entity}", f"{verdict}, {entity}.{attribute} = {value}")]
    m = _FORWARD_RE.match(query)
    if m:
        attribute, value = m.groups()
        matching = [e for e, facts in instance.fact_table.items() if facts.get(attribute) == value]
        revealed = [e for e in matching if rng.random() < instance.spec.reveal_prob]
        if not revealed:
            return [("sim:none", NO_RESULTS_SNIPPET)]
        return [(f"sim:{e}", f"{e} has {attribute} = {value}") for e in revealed]
    return [("sim:none", NO_RESULTS_SNIPPET)]


class SimWorldProvider:
    """Search-tool provider view of one world instance."""

    def __init__(self, instance: WorldInstance):
        self.instance = instance

    def search(self, query: str, intent: str, rng: random.Random) -> list[tuple[str, str]]:
        return answer_query(self.instance, query, intent, rng)


# --- scripted agents --------------------------------------------------------

UNKNOWN_ANSWER = "unknown"


class _ConversationView:
    """State the scripted agents reconstruct from the transcript alone."""

    def __init__(self, messages: Sequence[ChatMessage], budget_notice_text: str):
        self.facts: dict[str, set[str]] = {}
        self.check_results: list[tuple[bool, str]] = []
        self.queries_attempted = 0
        self.answers_given = 0
        self.forcing_positions: list[int] = []
        self.queries_since_forcing = 0
        self.exhausted_since_grant = False
        last_forcing = -1
        for pos, msg in enumerate(messages):
            if msg.role is Role.USER and pos >= 2:
                self.forcing_positions.append(pos)
                last_forcing = pos
                self.exhausted_since_grant = False
                self.queries_since_forcing = 0
            elif msg.role is Role.ASSISTANT:
                if "```tool_call" in msg.content:
                    self.queries_attempted += 1
                    if last_forcing >= 0:
                        self.queries_since_forcing += 1
                if "```final_answer" in msg.content:
                    self.answers_given += 1
            elif msg.role is Role.TOOL:
                if msg.content == budget_notice_text:
                    self.exhausted_since_grant = True
                    continue
                for entity, attribute, value in _FACT_RE.findall(msg.content):
                    self.facts.setdefault(attribute, set()).add(entity)
                for verdict, entity, attribute, value in _CHECK_RESULT_RE.findall(msg.content):
                    self.check_results.append((verdict == "yes", entity))

    @property
    def n_forcings(self) -> int:
        return len(self.forcing_positions)


def _intersection(view: _ConversationView, constraints: Sequence[tuple[str, str]]) -> set[str]:
    sets = [view.facts.get(a, set()) for a, _ in constraints]
    if any(not s for s in sets):
        return set()
    out = set(sets[0])
    for s in sets[1:]:
        out &= s
    return out


def _best_guess(view: _ConversationView, constraints: Sequence[tuple[str, str]], rng: random.Random) -> str:
    nonempty = [view.facts.get(a, set()) for a, _ in constraints if view.facts.get(a)]
    if not nonempty:
        return UNKNOWN_ANSWER
    partial = set(nonempty[0])
    for s in nonempty[1:]:
        partial &= s
    pool = partial or set().union(*nonempty)
    return rng.choice(sorted(pool)) if pool else UNKNOWN_ANSWER


def scripted_searcher(
    instance: WorldInstance,
    stop_prob: float = 0.15,
    confirm_rounds: int = 2,
) -> ScriptedBehavior:
    """Behavior table for a budgeted searcher over this instance.

    Core loop: round-robin forward queries over the constraints, union the
    reveals per attribute, and answer once the intersection over all
    constraints is nonempty (with a unique satisfying entity that set can
    only be the answer). On a budget notice it answers its best guess
    immediately; with nothing revealed that guess is "unknown".

    Two quirks mirror how real search agents behave. After each fruitless
    full round it gives up early with probability ``stop_prob`` and guesses,
    so some trajectories terminate prematurely. After a forcing injection it
    spends ``confirm_rounds`` fresh rounds re-probing before it may answer
    again, so granted budget actually gets used on alternative paths. Both
    draw from the trajectory seed only.
    """
    from .runtime import BUDGET_NOTICE_TEXT

    constraints = instance.constraints
    c = len(constraints)
    confirm_quota = confirm_rounds * c
    # draws mix in the instance seed so trajectories that share a sampling
    # seed still behave independently across problems
    inst_seed = instance.spec.seed

    def rule(messages: Sequence[ChatMessage], seed: int) -> str:
        view = _ConversationView(messages, BUDGET_NOTICE_TEXT)
        q = view.queries_attempted
        guess_rng = random.Random(derive_seed(seed, inst_seed, "guess", q, view.answers_given))
        if view.exhausted_since_grant:
            return compose_final_answer(_best_guess(view, constraints, guess_rng))
        full = _intersection(view, constraints)
        confirming = view.n_forcings >= 1 and view.answers_given == view.n_forcings
        quota_met = view.queries_since_forcing >= confirm_quota
        if full and (not confirming or quota_met):
            return compose_final_answer(sorted(full)[0])
        at_round_boundary = q > 0 and q % c == 0
        may_stop = not confirming or quota_met
        if at_round_boundary and may_stop:
            stop_draw = random.Random(derive_seed(seed, inst_seed, "stop", q)).random()
            if stop_draw < stop_prob:
                return compose_final_answer(_best_guess(view, constraints, guess_rng))
        attribute, value = constraints[q % c]
        return compose_tool_call(
            forward_query(attribute, value),
            f"identify entities where {attribute} = {value}",
        )

    return ScriptedBehavior(rule=rule, fallback=compose_final_answer(UNKNOWN_ANSWER))


_CANDIDATE_LINE_RE = re.compile(r"^Candidate answer:\s*(.*)$", re.MULTILINE)


def scripted_verifier(instance: WorldInstance) -> ScriptedBehavior:
    """Behavior table for a verifier: one check query per constraint.

    Reads the candidate from the verification prompt, checks every
    constraint against it, and reports the satisfied fraction as its
    confidence. Exactly ``n_constraints`` tool calls when the budget allows;
    on early exhaustion unchecked constraints count as unsatisfied.
    """
    from .runtime import BUDGET_NOTICE_TEXT

    constraints = instance.constraints
    c = len(constraints)

    def rule(messages: Sequence[ChatMessage], seed: int) -> str:
        m = _CANDIDATE_LINE_RE.search(messages[0].content)
        candidate = m.group(1).strip() if m else UNKNOWN_ANSWER
        view = _ConversationView(messages, BUDGET_NOTICE_TEXT)
        satisfied = sum(1 for ok, _ in view.check_results if ok)
        done = len(view.check_results)
        if view.exhausted_since_grant or done >= c:
            return compose_final_answer(f"CONFIDENCE: {satisfied / c:.4f}")
        attribute, value = constraints[done]
        return compose_tool_call(
            check_query(candidate, attribute, value),
            f"confirm {attribute} of {candidate}",
        )

    return ScriptedBehavior(rule=rule, fallback=compose_final_answer("CONFIDENCE: 0.0"))


# --- problem sets -----------------------------------------------------------

def problems_from_spec(spec: WorldSpec, count: int, id_prefix: str = "sim") -> list[Problem]:
    """Materialize ``count`` instances as problems carrying regeneration hints."""
    problems = []
    for i in range(count):
        inst_spec = replace(spec, seed=derive_seed(spec.seed, "instance", i))
        instance = generate_instance(inst_spec)
        problems.append(
            Problem(
                id=f"{id_prefix}-{i:04d}",
                prompt=instance.question,
                gold_answer=instance.answer_entity,
                source=Source.SIMULATED,
                world=inst_spec.to_record(),
            )
        )
    return problems


def instance_for_problem(problem: Problem) -> WorldInstance:
    if problem.world is None:
        raise ValueError(f"problem {problem.id!r} carries no world parameters")
    return generate_instance(WorldSpec.from_record(problem.world))
