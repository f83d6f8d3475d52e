"""Remote client contract tests against a fake transport."""
import json

import numpy as np
import pytest
import requests

from tableroute.errors import (
    ConnectionFailedError,
    ContractViolationError,
    MalformedResponseError,
    RequestTimeoutError,
)
from tableroute.remote import (
    RemoteAgentBackend,
    RemoteClient,
    RemoteEmbeddingBackend,
    RemoteGenerationBackend,
)


class FakeResponse:
    def __init__(self, body, status_code=200):
        self._body = body
        self.status_code = status_code

    def json(self):
        if isinstance(self._body, (dict, list)):
            return self._body
        return json.loads(self._body)


class FakeSession:
    """Replays a list of outcomes: exceptions raise, other values return."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, timeout=None):
        self.calls.append({"url": url, "json": json, "timeout": timeout})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def make_client(outcomes, max_retries=2):
    session = FakeSession(outcomes)
    client = RemoteClient(
        "http://backend:9000", timeout_s=1.0, max_retries=max_retries,
        backoff_s=0.01, session=session, sleep=lambda s: None,
    )
    return client, session


class TestRetryContract:
    def test_success_first_try(self):
        client, session = make_client([FakeResponse({"embedding": [1.0]})])
        body, latency = client.post_json("/embed", {"modality": "question"})
        assert body == {"embedding": [1.0]}
        assert latency >= 0
        assert len(session.calls) == 1

    def test_connection_refused_retries_then_fails(self):
        client, session = make_client([requests.ConnectionError()] * 3, max_retries=2)
        with pytest.raises(ConnectionFailedError) as err:
            client.post_json("/embed", {})
        assert len(session.calls) == 3  # 1 initial + 2 retries
        assert err.value.attempts == 3
        assert "http://backend:9000/embed" in str(err.value)

    def test_timeout_surfaced_distinctly(self):
        client, _ = make_client([requests.Timeout()] * 3)
        with pytest.raises(RequestTimeoutError):
            client.post_json("/generate", {})

    def test_transient_failure_then_success(self):
        client, session = make_client(
            [requests.ConnectionError(), FakeResponse({"text": "ok"})]
        )
        body, _ = client.post_json("/complete", {})
        assert body == {"text": "ok"}
        assert len(session.calls) == 2

    def test_malformed_response_never_retried(self):
        client, session = make_client([FakeResponse("not json"), FakeResponse({"x": 1})])
        with pytest.raises(MalformedResponseError):
            client.post_json("/embed", {})
        assert len(session.calls) == 1

    def test_http_error_never_retried(self):
        client, session = make_client([FakeResponse({}, status_code=500)] * 2)
        with pytest.raises(MalformedResponseError):
            client.post_json("/embed", {})
        assert len(session.calls) == 1


class TestRemoteEmbedding:
    def test_delivers_vector(self):
        client, session = make_client([FakeResponse({"embedding": [0.0] * 384})])
        backend = RemoteEmbeddingBackend(client, "question")
        vec = backend.embed("what?")
        assert vec.shape == (384,)
        assert session.calls[0]["json"] == {"modality": "question", "text": "what?"}

    def test_bytes_payload_base64(self):
        client, session = make_client([FakeResponse({"embedding": [0.0] * 6144})])
        backend = RemoteEmbeddingBackend(client, "vision")
        backend.embed(b"\x00\x01")
        assert "payload_b64" in session.calls[0]["json"]

    def test_wrong_dim_is_contract_violation(self):
        client, _ = make_client([FakeResponse({"embedding": [0.0] * 100})])
        backend = RemoteEmbeddingBackend(client, "question")
        with pytest.raises(ContractViolationError):
            backend.embed("q")

    def test_missing_field_is_malformed(self):
        client, _ = make_client([FakeResponse({"vector": []})])
        backend = RemoteEmbeddingBackend(client, "question")
        with pytest.raises(MalformedResponseError):
            backend.embed("q")


class TestRemoteGeneration:
    def test_delivers_output(self):
        client, session = make_client(
            [FakeResponse({"answer": "42", "explanation": "because", "output_tokens": 7})]
        )
        backend = RemoteGenerationBackend(client, "text")
        out = backend.generate("| t |", "q", dataset_tag="wtq")
        assert out.answer == "42"
        assert out.output_tokens == 7
        assert session.calls[0]["json"]["dataset_tag"] == "wtq"

    def test_token_fallback_whitespace(self):
        client, _ = make_client([FakeResponse({"answer": "two words", "explanation": "x y"})])
        backend = RemoteGenerationBackend(client, "text")
        out = backend.generate("| t |", "q")
        assert out.output_tokens == 4

    def test_missing_answer_malformed(self):
        client, _ = make_client([FakeResponse({"explanation": "no answer"})])
        backend = RemoteGenerationBackend(client, "text")
        with pytest.raises(MalformedResponseError):
            backend.generate("| t |", "q")


class TestRemoteAgent:
    def test_complete(self):
        client, _ = make_client([FakeResponse({"text": '{"answer": ["x"]}'})])
        agent = RemoteAgentBackend(client)
        reply = agent.complete("prompt")
        assert reply.text == '{"answer": ["x"]}'

    def test_missing_text_malformed(self):
        client, _ = make_client([FakeResponse({"output": "x"})])
        agent = RemoteAgentBackend(client)
        with pytest.raises(MalformedResponseError):
            agent.complete("prompt")
