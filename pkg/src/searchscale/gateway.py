"""Model access layer: one chat-completions surface for scripted and live backends.

Scripted backends are pure functions of (conversation, seed) driven by a
decision table, which is what lets the whole engine replay byte-identically.
HTTP backends speak the standard chat-completions wire format:

    POST {endpoint}/chat/completions
    {"model": ..., "messages": [{"role": ..., "content": ...}], "temperature": ...}

with a bearer credential read from the environment variable named in the
config. The credential never appears in config files or log output.

This module also owns the directive grammar agents reply with: exactly one
fenced block per message, tagged ``tool_call`` (JSON payload with "query"
and "intent") or ``final_answer`` (free text).
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import requests


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role in (Role.SYSTEM, Role.USER) and not self.content:
            raise ValueError(f"{self.role.value} message content must be nonempty")


@dataclass(frozen=True)
class BackendConfig:
    """Declarative backend description; scripted behaviors bind separately."""

    kind: str
    model_name: str = "scripted"
    endpoint: str | None = None
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.7

    def __post_init__(self) -> None:
        if self.kind not in ("scripted", "http"):
            raise ValueError(f"backend kind must be 'scripted' or 'http', got {self.kind!r}")
        if self.kind == "http":
            if not self.endpoint:
                raise ValueError("http backend requires an endpoint")
            if not self.api_key_env:
                raise ValueError("http backend requires api_key_env (the name of the credential variable)")
        else:
            if self.endpoint or self.api_key_env:
                raise ValueError("scripted backend must not carry endpoint or api_key_env")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "model_name": self.model_name,
            "endpoint": self.endpoint,
            "api_key_env": self.api_key_env,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "BackendConfig":
        return cls(
            kind=rec["kind"],
            model_name=rec.get("model_name", "scripted"),
            endpoint=rec.get("endpoint"),
            api_key_env=rec.get("api_key_env"),
            timeout=rec.get("timeout", 60.0),
            max_retries=rec.get("max_retries", 3),
            temperature=rec.get("temperature", 0.7),
        )


class BackendError(RuntimeError):
    """Transport failure that survived all retries; carries the attempt count."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(RuntimeError):
    """The remote replied with something that is not a chat completion."""


class AmbiguousAction(ValueError):
    """More than one directive block in a single assistant message."""


class MalformedAction(ValueError):
    """A directive block whose payload cannot be decoded."""


def conversation_digest(messages: Sequence[ChatMessage]) -> str:
    """Stable hex digest of a conversation, used to key scripted decision tables."""
    h = hashlib.sha256()
    for m in messages:
        h.update(m.role.value.encode("utf-8"))
        h.update(b"\x1f")
        h.update(m.content.encode("utf-8"))
        h.update(b"\x1e")
    return h.hexdigest()


@dataclass(frozen=True)
class ScriptedBehavior:
    """Deterministic stand-in for a model.

    Lookup order on each turn: the literal table keyed by (conversation
    digest, assistant-turn index), then the rule (a pure function of the
    conversation and seed), then the fallback text. Total by construction:
    every query yields a message.
    """

    entries: Mapping[tuple[str, int], str] = field(default_factory=dict)
    fallback: str = "I need to think about this further."
    rule: Callable[[Sequence[ChatMessage], int], str | None] | None = None

    def reply(self, messages: Sequence[ChatMessage], seed: int) -> str:
        step = sum(1 for m in messages if m.role is Role.ASSISTANT)
        text = self.entries.get((conversation_digest(messages), step))
        if text is None and self.rule is not None:
            text = self.rule(messages, seed)
        return self.fallback if text is None else text


class ScriptedBackend:
    def __init__(self, config: BackendConfig, behavior: ScriptedBehavior):
        if config.kind != "scripted":
            raise ValueError("ScriptedBackend requires a scripted config")
        self.config = config
        self.behavior = behavior

    def complete(self, messages: Sequence[ChatMessage], seed: int) -> ChatMessage:
        _check_messages(messages)
        return ChatMessage(Role.ASSISTANT, self.behavior.reply(messages, seed))


class HttpBackend:
    """Chat-completions client with exponential-backoff retries.

    ``max_in_flight`` caps concurrent requests across all threads sharing
    this backend instance.
    """

    RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

    def __init__(self, config: BackendConfig, max_in_flight: int = 8):
        if config.kind != "http":
            raise ValueError("HttpBackend requires an http config")
        self.config = config
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._session = requests.Session()

    def _credential(self) -> str:
        key = os.environ.get(self.config.api_key_env or "")
        if not key:
            raise BackendError(f"credential variable {self.config.api_key_env!r} is not set", attempts=0)
        return key

    def complete(self, messages: Sequence[ChatMessage], seed: int) -> ChatMessage:
        _check_messages(messages)
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": m.role.value, "content": m.content} for m in messages],
            "temperature": self.config.temperature,
        }
        headers = {"Authorization": f"Bearer {self._credential()}"}
        attempts = 0
        delay = 1.0
        last_failure = "no attempt made"
        while attempts <= self.config.max_retries:
            if attempts > 0:
                time.sleep(delay)
                delay *= 2
            attempts += 1
            try:
                with self._gate:
                    resp = self._session.post(url, json=payload, headers=headers, timeout=self.config.timeout)
            except requests.RequestException as exc:
                last_failure = f"transport error: {exc.__class__.__name__}"
                continue
            if resp.status_code in self.RETRYABLE_STATUSES:
                last_failure = f"status {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"status {resp.status_code}: {resp.text[:200]}")
            return _parse_completion(resp.text)
        raise BackendError(f"backend unreachable after {attempts} attempts ({last_failure})", attempts=attempts)


Backend = ScriptedBackend | HttpBackend


def build_backend(
    config: BackendConfig,
    behavior: ScriptedBehavior | None = None,
    max_in_flight: int = 8,
) -> Backend:
    if config.kind == "scripted":
        if behavior is None:
            raise ValueError("scripted backend requires a ScriptedBehavior")
        return ScriptedBackend(config, behavior)
    return HttpBackend(config, max_in_flight=max_in_flight)


def complete(backend: Backend, messages: Sequence[ChatMessage], seed: int) -> ChatMessage:
    return backend.complete(messages, seed)


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be nonempty")
    if messages[0].role is not Role.SYSTEM:
        raise ValueError("first message must have role system")


def _parse_completion(body: str) -> ChatMessage:
    try:
        data = json.loads(body)
        content = data["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed completion response: {body[:200]}") from exc
    if not isinstance(content, str):
        raise ProtocolError(f"completion content is not text: {body[:200]}")
    return ChatMessage(Role.ASSISTANT, content)


# --- directive grammar ------------------------------------------------------

_DIRECTIVE_RE = re.compile(r"```(tool_call|final_answer)\b(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ToolCallAction:
    query: str
    intent: str


@dataclass(frozen=True)
class FinalAnswerAction:
    text: str


def compose_tool_call(query: str, intent: str) -> str:
    body = json.dumps({"query": query, "intent": intent}, ensure_ascii=False)
    return f"```tool_call\n{body}\n```"


def compose_final_answer(text: str) -> str:
    return f"```final_answer\n{text}\n```"


def parse_tool_invocation(message: ChatMessage) -> ToolCallAction | FinalAnswerAction | None:
    """Extract the single directive from an assistant message.

    Returns None for plain reasoning text. Raises AmbiguousAction when two or
    more directive blocks appear, MalformedAction when a tool_call payload is
    not JSON or lacks the required fields.
    """
    matches = _DIRECTIVE_RE.findall(message.content)
    if not matches:
        return None
    if len(matches) > 1:
        raise AmbiguousAction(f"{len(matches)} directive blocks in one message")
    tag, body = matches[0]
    if tag == "final_answer":
        return FinalAnswerAction(body.strip())
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedAction(f"tool_call payload is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedAction("tool_call payload must be a JSON object")
    query = payload.get("query")
    intent = payload.get("intent")
    if not isinstance(query, str) or not isinstance(intent, str):
        raise MalformedAction("tool_call payload requires string fields 'query' and 'intent'")
    if not query.strip():
        raise MalformedAction("tool_call query must be non-empty")
    return ToolCallAction(query=query, intent=intent)
