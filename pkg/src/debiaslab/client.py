"""Deterministic client for OpenAI-compatible chat-completions endpoints.

All experiment traffic goes through here: temperature is pinned to zero,
responses are cached on disk keyed by a canonical request digest (reruns
are free and reproducible), retries use exponential backoff, and batches
run under a hard bound on in-flight requests while preserving input order.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from .errors import ConfigurationError, ProtocolError, TransportError

CHAT_ROUTE = "/v1/chat/completions"
ENDPOINT_ENV = "DEBIASLAB_ENDPOINT"
TOKEN_ENV = "DEBIASLAB_API_TOKEN"


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple
    temperature: float = 0.0
    max_tokens: int = 256

    def __init__(self, model, messages, temperature=0.0, max_tokens=256):
        # messages arrive as lists of dicts; freeze them for hashability
        object.__setattr__(self, "model", model)
        object.__setattr__(
            self,
            "messages",
            tuple((m["role"], m["content"]) for m in messages),
        )
        object.__setattr__(self, "temperature", float(temperature))
        object.__setattr__(self, "max_tokens", int(max_tokens))
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def cache_key(endpoint: str, request: ChatRequest) -> str:
    """Digest of the canonicalized request; equal requests map to equal
    keys regardless of dict field order."""
    canonical = json.dumps(
        {"endpoint": endpoint, "request": request.payload()},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed, append-only response store.

    One JSON file per digest; writes go through a temp file and atomic
    rename so concurrent readers never observe partial content.
    """

    def __init__(self, directory):
        self.directory = str(directory)
        os.makedirs(self.directory, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, f"{key}.json")

    def get(self, key: str) -> str | None:
        try:
            with open(self._path(key), encoding="utf-8") as fh:
                return json.load(fh)["content"]
        except FileNotFoundError:
            return None

    def put(self, key: str, content: str) -> None:
        record = {"content": content, "timestamp": time.time()}
        with self._lock:
            if os.path.exists(self._path(key)):
                return  # append-only: first response is ground truth
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump(record, fh, ensure_ascii=False)
                os.replace(tmp, self._path(key))
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


@dataclass
class BatchOutcome:
    """Per-request result of a batch run, in input order."""

    responses: list  # str or None per index
    errors: dict = field(default_factory=dict)  # index -> error message
    network_calls: int = 0
    cache_hits: int = 0


class InferenceClient:
    """Synchronous client with retry, cache, and a bounded-parallel batch
    runner. Configure via arguments or the DEBIASLAB_ENDPOINT /
    DEBIASLAB_API_TOKEN environment variables."""

    def __init__(
        self,
        endpoint: str | None = None,
        model: str = "default",
        cache_dir: str | None = None,
        auth_token: str | None = None,
        max_retries: int = 3,
        timeout: float = 120.0,
        backoff_base: float = 0.25,
        parallelism: int = 4,
    ):
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ConfigurationError(
                f"no endpoint configured (argument or {ENDPOINT_ENV})"
            )
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.auth_token = auth_token or os.environ.get(TOKEN_ENV)
        self.max_retries = max_retries
        self.timeout = timeout
        self.backoff_base = backoff_base
        if parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")
        self.parallelism = parallelism
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.network_calls = 0
        self._stats_lock = threading.Lock()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        return headers

    def _post_once(self, request: ChatRequest) -> str:
        response = requests.post(
            self.endpoint + CHAT_ROUTE,
            json=request.payload(),
            headers=self._headers(),
            timeout=self.timeout,
        )
        if response.status_code >= 500:
            raise TransportError(f"server error {response.status_code}")
        if response.status_code != 200:
            raise ProtocolError(
                f"unexpected status {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat-completions body: {exc}") from exc
        if not isinstance(content, str):
            raise ProtocolError("message content is not text")
        return content

    def _complete(self, request: ChatRequest) -> tuple[str, str]:
        """(content, source) where source is "cache" or "network"."""
        key = cache_key(self.endpoint, request)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached, "cache"

        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._stats_lock:
                    self.network_calls += 1
                content = self._post_once(request)
                if self.cache is not None:
                    self.cache.put(key, content)
                return content, "network"
            except (TransportError, requests.exceptions.RequestException) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_base * (2**attempt))
        raise TransportError(
            f"exhausted {self.max_retries} retries: {last_error}"
        ) from last_error

    def complete_chat(self, request: ChatRequest) -> str:
        """Return the first choice's content; cache first, then POST with
        exponential backoff on transport failures and 5xx."""
        return self._complete(request)[0]

    def run_batch(self, requests_list, parallelism: int | None = None) -> BatchOutcome:
        """Execute requests with at most `parallelism` in flight.

        Results come back in input order. Identical requests are coalesced
        so each unique request costs at most one network dispatch;
        individual failures are recorded per index without aborting the
        batch. `network_calls` counts dispatched unique requests and
        `cache_hits` the requests served without one.
        """
        bound = self.parallelism if parallelism is None else parallelism
        if bound < 1:
            raise ConfigurationError("parallelism must be >= 1")
        requests_list = list(requests_list)
        outcome = BatchOutcome(responses=[None] * len(requests_list))
        if not requests_list:
            return outcome

        unique: dict[str, list[int]] = {}
        keyed = []
        for i, req in enumerate(requests_list):
            key = cache_key(self.endpoint, req)
            if key not in unique:
                unique[key] = []
                keyed.append((key, req))
            unique[key].append(i)

        def fetch(item):
            key, req = item
            try:
                content, source = self._complete(req)
                return key, content, source, None
            except (TransportError, ProtocolError) as exc:
                return key, None, "network", str(exc)

        with ThreadPoolExecutor(max_workers=bound) as pool:
            for key, content, source, error in pool.map(fetch, keyed):
                fanout = unique[key]
                if source == "network":
                    outcome.network_calls += 1
                    outcome.cache_hits += len(fanout) - 1
                else:
                    outcome.cache_hits += len(fanout)
                for index in fanout:
                    if error is None:
                        outcome.responses[index] = content
                    else:
                        outcome.errors[index] = error
        return outcome
