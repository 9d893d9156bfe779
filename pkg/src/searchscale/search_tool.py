"""Budgeted search-tool access.

Budget enforcement lives here, not in providers: an exhausted budget means
the provider is never contacted and nothing is decremented, while provider
failures do consume budget (the call happened). Every grant is recorded so
audits can replay the arithmetic:

    initial + sum(grants) - consumed == allowance

Providers are anything with ``search(query, intent, rng) -> [(source_id,
snippet), ...]``. The simulated world ships its own provider; a thin live
pipeline lives here behind an explicit opt-in and stays out of the
deterministic test surface.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import requests

MAX_FINDINGS = 5
MAX_SNIPPET_BYTES = 1024
_TRUNCATION_MARK = " [truncated]"


class ToolStatus(str, Enum):
    OK = "ok"
    BUDGET_EXHAUSTED = "budget_exhausted"
    PROVIDER_ERROR = "provider_error"


class SearchProvider(Protocol):
    def search(self, query: str, intent: str, rng: random.Random) -> Sequence[tuple[str, str]]: ...


@dataclass(frozen=True)
class ToolRequest:
    query: str
    intent: str
    trajectory_id: str
    call_ordinal: int

    def __post_init__(self) -> None:
        if not self.query:
            raise ValueError("ToolRequest.query must be nonempty")
        if self.call_ordinal < 1:
            raise ValueError("ToolRequest.call_ordinal is 1-based")


@dataclass(frozen=True)
class ToolResponse:
    status: ToolStatus
    findings: tuple[tuple[str, str], ...]
    calls_remaining: int


@dataclass
class BudgetState:
    """Mutable per-trajectory call budget with a grant audit trail."""

    initial: int
    allowance: int = -1
    grants: list[int] = field(default_factory=list)
    consumed: int = 0

    def __post_init__(self) -> None:
        if self.initial < 0:
            raise ValueError("initial budget must be >= 0")
        if self.allowance == -1:
            self.allowance = self.initial

    def conserved(self) -> bool:
        return self.initial + sum(self.grants) - self.consumed == self.allowance


def grant_budget(budget: BudgetState, increment: int) -> None:
    if increment < 1:
        raise ValueError("budget grants must be positive")
    budget.grants.append(increment)
    budget.allowance += increment


def invoke(
    request: ToolRequest,
    budget: BudgetState,
    provider: SearchProvider,
    rng: random.Random,
) -> ToolResponse:
    """One metered tool call. Exhausted budgets never reach the provider."""
    if budget.allowance <= 0:
        return ToolResponse(ToolStatus.BUDGET_EXHAUSTED, (), 0)
    budget.allowance -= 1
    budget.consumed += 1
    try:
        raw = list(provider.search(request.query, request.intent, rng))
    except Exception:
        # the call was made, so it stays on the meter
        return ToolResponse(ToolStatus.PROVIDER_ERROR, (), budget.allowance)
    return ToolResponse(ToolStatus.OK, _cap_findings(raw), budget.allowance)


def _truncate_snippet(snippet: str, limit: int = MAX_SNIPPET_BYTES) -> str:
    if len(snippet.encode("utf-8")) <= limit:
        return snippet
    budget = limit - len(_TRUNCATION_MARK.encode("utf-8"))
    out = snippet[:limit]  # coarse cut; a char is at least one byte
    while len(out.encode("utf-8")) > budget:
        out = out[:-1]
    return out + _TRUNCATION_MARK


def _cap_findings(raw: Sequence[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
    kept = [(str(sid), str(snippet)) for sid, snippet in raw[:MAX_FINDINGS]]
    overflow = len(raw) - MAX_FINDINGS
    if overflow > 0 and kept:
        sid, snippet = kept[-1]
        kept[-1] = (sid, snippet + f" [+{overflow} more results omitted]")
    return tuple((sid, _truncate_snippet(snippet)) for sid, snippet in kept)


class LiveSearchProvider:
    """Thin live pipeline: search API call, optional page fetch, optional digest.

    Excluded from the deterministic suite; requires an explicit endpoint to
    exist at all. The optional summarizer is a gateway backend used to
    compress fetched pages with one extra model call, which is organizer
    overhead and deliberately not metered against the agent's tool budget.
    """

    def __init__(self, endpoint: str, timeout: float = 20.0, fetch_pages: bool = False, summarizer=None):
        if not endpoint:
            raise ValueError("live search requires an endpoint")
        self.endpoint = endpoint
        self.timeout = timeout
        self.fetch_pages = fetch_pages
        self.summarizer = summarizer
        self._session = requests.Session()

    def search(self, query: str, intent: str, rng: random.Random) -> list[tuple[str, str]]:
        resp = self._session.post(self.endpoint, json={"query": query, "intent": intent}, timeout=self.timeout)
        resp.raise_for_status()
        results = resp.json().get("results", [])
        findings: list[tuple[str, str]] = []
        for item in results[:MAX_FINDINGS]:
            source_id = str(item.get("id") or item.get("url") or f"result-{len(findings)}")
            text = str(item.get("text") or "")
            if self.fetch_pages and item.get("url"):
                try:
                    page = self._session.get(item["url"], timeout=self.timeout)
                    text = page.text[:4096]
                except requests.RequestException:
                    pass  # keep the search snippet
            findings.append((source_id, self._digest(query, intent, text)))
        return findings

    def _digest(self, query: str, intent: str, text: str) -> str:
        if self.summarizer is None or not text:
            return text
        from .gateway import ChatMessage, Role  # local import to keep module edges thin

        reply = self.summarizer.complete(
            [
                ChatMessage(Role.SYSTEM, "Condense the page excerpt into the facts relevant to the query."),
                ChatMessage(Role.USER, f"Query: {query}\nIntent: {intent}\n\n{text}"),
            ],
            seed=0,
        )
        return reply.content
