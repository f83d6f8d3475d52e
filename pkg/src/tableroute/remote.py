"""HTTP/JSON client for plugging real model servers into the engine.

Wire protocol:
    POST /embed    {"modality": ..., "text": ...} or {"modality": ..., "payload_b64": ...}
                   -> {"embedding": [...]}
    POST /generate {"table_markdown": ..., "question": ..., "dataset_tag": ...}
                   -> {"answer": ..., "explanation": ..., "output_tokens": ...}
    POST /complete {"prompt": ...} -> {"text": ...}

Latency is measured client-side with a monotonic clock. Transport failures
(timeout, connection) are retried with exponential backoff up to the
configured retry count; application-level problems are never retried.
"""
from __future__ import annotations

import base64
import time
from typing import Callable

import numpy as np
import requests

from .errors import (
    ConnectionFailedError,
    ContractViolationError,
    MalformedResponseError,
    RequestTimeoutError,
    TransportError,
)
from .experts import EMBED_DIMS, ExpertOutput, whitespace_token_count
from .fusion import AgentReply


class RemoteClient:
    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 10.0,
        max_retries: int = 2,
        backoff_s: float = 0.5,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._session = session if session is not None else requests.Session()
        self._sleep = sleep

    def post_json(self, path: str, payload: dict) -> tuple[dict, float]:
        """POST and parse JSON. Returns (body, seconds). Retries transport errors only."""
        url = self.endpoint + path
        attempts = self.max_retries + 1
        last_error: TransportError | None = None
        for attempt in range(attempts):
            start = time.monotonic()
            try:
                resp = self._session.post(url, json=payload, timeout=self.timeout_s)
            except requests.Timeout:
                last_error = RequestTimeoutError(
                    f"{url} timed out after {self.timeout_s}s "
                    f"(attempt {attempt + 1}/{attempts})",
                    endpoint=url,
                    attempts=attempt + 1,
                )
            except requests.ConnectionError:
                last_error = ConnectionFailedError(
                    f"cannot connect to {url} (attempt {attempt + 1}/{attempts})",
                    endpoint=url,
                    attempts=attempt + 1,
                )
            else:
                elapsed = time.monotonic() - start
                if resp.status_code != 200:
                    raise MalformedResponseError(f"{url} returned HTTP {resp.status_code}")
                try:
                    body = resp.json()
                except ValueError as e:
                    raise MalformedResponseError(f"{url} returned non-JSON body") from e
                if not isinstance(body, dict):
                    raise MalformedResponseError(f"{url} returned a non-object JSON body")
                return body, elapsed
            if attempt + 1 < attempts:
                self._sleep(self.backoff_s * (2**attempt))
        assert last_error is not None
        raise last_error


class RemoteEmbeddingBackend:
    def __init__(self, client: RemoteClient, modality: str):
        self.client = client
        self.modality = modality
        self.dim = EMBED_DIMS[modality]

    def embed(self, payload: str | bytes, tag: str | None = None) -> np.ndarray:
        return self.embed_timed(payload, tag)[0]

    def embed_timed(
        self, payload: str | bytes, tag: str | None = None, nonce: int = 0
    ) -> tuple[np.ndarray, float]:
        req: dict = {"modality": self.modality}
        if isinstance(payload, bytes):
            req["payload_b64"] = base64.b64encode(payload).decode("ascii")
        else:
            req["text"] = payload
        body, elapsed = self.client.post_json("/embed", req)
        if "embedding" not in body or not isinstance(body["embedding"], list):
            raise MalformedResponseError(
                f"{self.client.endpoint}/embed response missing 'embedding' field"
            )
        vec = np.asarray(body["embedding"], dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ContractViolationError(
                f"{self.client.endpoint}/embed returned {vec.size}-dim vector "
                f"for {self.modality}, expected {self.dim}"
            )
        return vec, elapsed


class RemoteGenerationBackend:
    def __init__(self, client: RemoteClient, path: str):
        self.client = client
        self.path = path

    def generate(
        self,
        table_markdown: str,
        question: str,
        *,
        example_id: str | None = None,
        gold_answer: str | None = None,
        dataset_tag: str | None = None,
        nonce: int = 0,
    ) -> ExpertOutput:
        body, elapsed = self.client.post_json(
            "/generate",
            {
                "table_markdown": table_markdown,
                "question": question,
                "dataset_tag": dataset_tag,
            },
        )
        if "answer" not in body:
            raise MalformedResponseError(
                f"{self.client.endpoint}/generate response missing 'answer' field"
            )
        answer = str(body["answer"])
        explanation = str(body.get("explanation", ""))
        tokens = body.get("output_tokens")
        if tokens is None:
            tokens = whitespace_token_count(f"{answer} {explanation}".strip())
        return ExpertOutput(answer, explanation, elapsed, int(tokens))


class RemoteAgentBackend:
    def __init__(self, client: RemoteClient):
        self.client = client

    def complete(self, prompt: str, *, context=None) -> AgentReply:
        body, elapsed = self.client.post_json("/complete", {"prompt": prompt})
        if "text" not in body:
            raise MalformedResponseError(
                f"{self.client.endpoint}/complete response missing 'text' field"
            )
        return AgentReply(text=str(body["text"]), latency_seconds=elapsed, output_tokens=None)
