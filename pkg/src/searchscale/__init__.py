"""Test-time scaling for tool-using search agents.

Sequential scaling stretches a single trajectory with tool budgets and
budget forcing; parallel scaling samples several trajectories and picks an
answer by majority, verifier score, or a weighted blend. Everything runs
deterministically against a simulated search world, or against any chat
completions endpoint.
"""

from .aggregation import (
    AggregationOutcome,
    Candidate,
    best_of_k,
    canonicalize,
    frontier,
    maj_at_k,
    majority_vote,
    pass_at_k,
    rule_accuracy,
    weighted_vote,
    write_frontier_csv,
)
from .domain import (
    Problem,
    RunSet,
    ScalingPolicy,
    Source,
    Step,
    StepKind,
    StructureError,
    Termination,
    Trajectory,
    VerificationRecord,
    canonical_json,
    derive_seed,
    read_runset,
    write_runset,
)
from .gateway import (
    AmbiguousAction,
    BackendConfig,
    BackendError,
    ChatMessage,
    FinalAnswerAction,
    MalformedAction,
    ProtocolError,
    Role,
    ScriptedBackend,
    ScriptedBehavior,
    build_backend,
    complete,
    parse_tool_invocation,
)
from .harness import (
    ConfigError,
    JsonlProblems,
    PRESETS,
    RunConfig,
    SimulatedProblems,
    asymmetry_from_runset,
    config_digest,
    config_from_dict,
    measure_asymmetry,
    preset,
    report,
    run,
)
from .runtime import PromptTemplate, load_template, run_trajectory, sample_parallel
from .search_tool import BudgetState, SearchProvider, ToolRequest, ToolResponse, ToolStatus, grant_budget, invoke
from .simworld import (
    SimWorldProvider,
    WorldInstance,
    WorldSpec,
    generate_instance,
    instance_for_problem,
    problems_from_spec,
    scripted_searcher,
    scripted_verifier,
)
from .verifier import VerifierPolicy, parse_confidence, verify_candidate

__version__ = "0.1.0"
