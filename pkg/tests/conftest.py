"""Shared fixtures: a tiny deterministic world and a scriptable HTTP stub."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from searchscale.domain import ScalingPolicy
from searchscale.gateway import BackendConfig, build_backend
from searchscale.simworld import (
    SimWorldProvider,
    WorldSpec,
    generate_instance,
    problems_from_spec,
    scripted_searcher,
    scripted_verifier,
)

EASY_SPEC = WorldSpec(n_entities=20, n_attributes=4, n_constraints=2, reveal_prob=1.0, seed=11)
HARD_SPEC = WorldSpec(n_entities=50, n_attributes=6, n_constraints=3, reveal_prob=0.3, seed=7)


@pytest.fixture
def easy_setup():
    """One fully-revealing world: problem, instance, provider, scripted searcher."""
    problem = problems_from_spec(EASY_SPEC, 1, id_prefix="easy")[0]
    instance = generate_instance(WorldSpec.from_record(problem.world))
    provider = SimWorldProvider(instance)
    backend = build_backend(
        BackendConfig(kind="scripted", model_name="sim-searcher"), scripted_searcher(instance)
    )
    return problem, instance, provider, backend


def make_setup(spec: WorldSpec, index: int = 0, role: str = "searcher", **agent_kwargs):
    problem = problems_from_spec(spec, index + 1)[index]
    instance = generate_instance(WorldSpec.from_record(problem.world))
    provider = SimWorldProvider(instance)
    factory = scripted_searcher if role == "searcher" else scripted_verifier
    backend = build_backend(
        BackendConfig(kind="scripted", model_name=f"sim-{role}"), factory(instance, **agent_kwargs)
    )
    return problem, instance, provider, backend


class CountingProvider:
    """Wraps a provider and counts how many searches actually reach it."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def search(self, query, intent, rng):
        self.calls += 1
        return self.inner.search(query, intent, rng)


class StubChatServer:
    """Local chat-completions endpoint with a scripted response program.

    Each program entry is (status, body_text). When the program runs dry the
    server replies with a well-formed completion echoing a default message.
    Captures (path, headers, body) per request for wire-format assertions.
    """

    def __init__(self, program=None, default_content="ok"):
        self.program = list(program or [])
        self.captured = []
        self.default_content = default_content
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with stub._lock:
                    stub.captured.append(
                        (self.path, {k.lower(): v for k, v in self.headers.items()}, raw.decode("utf-8"))
                    )
                    if stub.program:
                        status, body = stub.program.pop(0)
                    else:
                        status, body = 200, json.dumps(
                            {"choices": [{"message": {"role": "assistant", "content": stub.default_content}}]}
                        )
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(body.encode("utf-8"))

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        self.endpoint = f"http://127.0.0.1:{self._server.server_port}"

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def factory(program=None, default_content="ok"):
        server = StubChatServer(program, default_content)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.close()


def tiny_policy(**kwargs) -> ScalingPolicy:
    kwargs.setdefault("max_tool_calls", 8)
    return ScalingPolicy(**kwargs)
