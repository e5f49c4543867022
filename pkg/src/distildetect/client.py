"""OpenAI-compatible endpoint client with a content-addressed disk cache.

Generation traces come from /v1/chat/completions with logprobs enabled
and temperature 0 (greedy); input-token logprobs come from
/v1/completions in echo mode with max_tokens 0. Every response is
reduced to a trace record and cached under the SHA-256 of the request
identity (model, record kind, prompt, decode params), so a finished
audit re-runs without network access. A corrupted cache entry fails its
checksum and is treated as a miss.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

from .errors import CapabilityError, TraceError, TransportError
from .traces import (
    LABEL_UNKNOWN,
    VARIANT_LOWERCASED,
    DecodeParams,
    GenerationTrace,
    InputTrace,
    TokenProb,
    record_from_obj,
    record_to_obj,
)

logger = logging.getLogger(__name__)

DEFAULT_SYSTEM_PROMPT = "You are Qwen, created by Alibaba Cloud. You are a helpful assistant."
API_KEY_ENV_VARS = ("DISTILDETECT_API_KEY", "OPENAI_API_KEY")
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_id: str
    api_key: str | None = None
    timeout: float = 60.0
    max_parallel: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.max_parallel < 1:
            raise TransportError(f"max_parallel must be >= 1, got {self.max_parallel}")
        if self.timeout <= 0:
            raise TransportError(f"timeout must be > 0, got {self.timeout}")

    def url(self, path: str) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/v1"):
            base = base[: -len("/v1")]
        return f"{base}{path}"


def resolve_api_key(explicit: str | None = None) -> str | None:
    if explicit:
        return explicit
    for var in API_KEY_ENV_VARS:
        value = os.environ.get(var)
        if value:
            return value
    return None


def cache_key(model_id: str, kind: str, prompt: str, params: dict) -> str:
    """SHA-256 over the canonical JSON of the request identity."""
    canonical = json.dumps(
        {"kind": kind, "model_id": model_id, "params": params, "prompt": prompt},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _payload_checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TraceCache:
    """One JSON file per key plus an in-memory layer; checksummed on read."""

    def __init__(self, cache_dir):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, dict] = {}
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.dir / f"{key}.json"

    def get(self, key: str) -> dict | None:
        with self._lock:
            if key in self._memory:
                return self._memory[key]
        path = self._path(key)
        if not path.exists():
            return None
        try:
            entry = json.loads(path.read_text("utf-8"))
            payload = entry["payload"]
            if entry["checksum"] != _payload_checksum(payload):
                logger.warning("cache entry %s failed checksum; refetching", key[:12])
                return None
        except (ValueError, KeyError, TypeError, OSError):
            logger.warning("cache entry %s unreadable; refetching", key[:12])
            return None
        with self._lock:
            self._memory[key] = payload
        return payload

    def put(self, key: str, payload: dict) -> None:
        entry = {"checksum": _payload_checksum(payload), "payload": payload}
        tmp = self._path(key).with_suffix(".tmp")
        tmp.write_text(json.dumps(entry, ensure_ascii=False, separators=(",", ":")), "utf-8")
        os.replace(tmp, self._path(key))
        with self._lock:
            self._memory[key] = payload


@dataclass(frozen=True)
class GenerationRequest:
    question_id: str
    question_text: str
    decode: DecodeParams
    label: str = LABEL_UNKNOWN


@dataclass(frozen=True)
class InputRequest:
    question_id: str
    text: str
    variant: str


@dataclass(frozen=True)
class BatchFailure:
    index: int
    question_id: str
    error: str


@dataclass
class BatchResult:
    results: list  # trace or None, aligned with the request list
    failures: list[BatchFailure]


def _default_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
    try:
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    try:
        body = response.json()
    except ValueError as exc:
        raise TransportError(f"{url} returned non-JSON body (status {response.status_code})") from exc
    return response.status_code, body


class InferenceClient:
    """Cached, retrying, concurrency-bounded harvester of trace records.

    transport is injectable for tests: (url, payload, headers, timeout)
    -> (status_code, body).
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        cache_dir=None,
        transport: Callable[[str, dict, dict, float], tuple[int, dict]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.cache = TraceCache(cache_dir) if cache_dir is not None else None
        self.transport = transport or _default_transport
        self._sleep = sleep
        self._jitter = random.Random(0x5EED)
        self._key_locks: dict[str, threading.Lock] = {}
        self._key_locks_guard = threading.Lock()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = resolve_api_key(self.endpoint.api_key)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _key_lock(self, key: str) -> threading.Lock:
        with self._key_locks_guard:
            return self._key_locks.setdefault(key, threading.Lock())

    def _post(self, path: str, payload: dict) -> dict:
        url = self.endpoint.url(path)
        policy = self.endpoint.retry
        last_error: Exception | None = None
        for attempt in range(policy.max_attempts):
            if attempt:
                delay = policy.backoff_base * (2 ** (attempt - 1)) + self._jitter.uniform(0, policy.backoff_base)
                self._sleep(delay)
            try:
                status, body = self.transport(url, payload, self._headers(), self.endpoint.timeout)
            except TransportError as exc:
                last_error = exc
                continue
            if status == 200:
                return body
            message = body.get("error", {}).get("message", "") if isinstance(body, dict) else ""
            if status in RETRYABLE_STATUS:
                last_error = TransportError(f"{url} returned {status}: {message}")
                continue
            raise TransportError(f"{url} returned {status}: {message}")
        raise TransportError(f"{url} failed after {policy.max_attempts} attempts: {last_error}")

    def fetch_generation(self, request: GenerationRequest) -> GenerationTrace:
        decode = request.decode
        params = {
            "strategy": decode.strategy,
            "max_tokens": decode.max_tokens,
            "system_prompt": decode.system_prompt,
        }
        key = cache_key(self.endpoint.model_id, "generation", request.question_text, params)
        with self._key_lock(key):
            if self.cache is not None:
                cached = self.cache.get(key)
                if cached is not None:
                    trace = record_from_obj(cached)
                    return self._relabel(trace, request)
            trace = self._fetch_generation_uncached(request)
            if self.cache is not None:
                self.cache.put(key, record_to_obj(trace))
        return trace

    def _relabel(self, trace: GenerationTrace, request: GenerationRequest) -> GenerationTrace:
        # labels are audit metadata, not part of the cached response identity
        if trace.label == request.label and trace.question_id == request.question_id:
            return trace
        return GenerationTrace(
            question_id=request.question_id,
            question_text=trace.question_text,
            label=request.label,
            generated=trace.generated,
            model_id=trace.model_id,
            decode=trace.decode,
            extra=trace.extra,
        )

    def _fetch_generation_uncached(self, request: GenerationRequest) -> GenerationTrace:
        decode = request.decode
        messages = []
        if decode.system_prompt:
            messages.append({"role": "system", "content": decode.system_prompt})
        messages.append({"role": "user", "content": request.question_text})
        body = self._post(
            "/v1/chat/completions",
            {
                "model": self.endpoint.model_id,
                "messages": messages,
                "temperature": 0.0,
                "max_tokens": decode.max_tokens,
                "logprobs": True,
            },
        )
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {body!r}") from exc
        logprobs = choice.get("logprobs")
        content = logprobs.get("content") if isinstance(logprobs, dict) else None
        if content is None:
            raise CapabilityError(
                f"endpoint {self.endpoint.base_url} did not return token logprobs for chat completions"
            )
        tokens = tuple(TokenProb(item["token"], float(item["logprob"])) for item in content)
        return GenerationTrace(
            question_id=request.question_id,
            question_text=request.question_text,
            label=request.label,
            generated=tokens,
            model_id=self.endpoint.model_id,
            decode=decode,
        )

    def fetch_input_logprobs(self, request: InputRequest) -> InputTrace:
        text = request.text.lower() if request.variant == VARIANT_LOWERCASED else request.text
        params = {"variant": request.variant}
        key = cache_key(self.endpoint.model_id, "input", text, params)
        with self._key_lock(key):
            if self.cache is not None:
                cached = self.cache.get(key)
                if cached is not None:
                    trace = record_from_obj(cached)
                    if trace.question_id != request.question_id:
                        trace = InputTrace(
                            question_id=request.question_id,
                            text=trace.text,
                            input_tokens=trace.input_tokens,
                            variant=trace.variant,
                            vocab_stats=trace.vocab_stats,
                            extra=trace.extra,
                        )
                    return trace
            trace = self._fetch_input_uncached(request.question_id, text, request.variant)
            if self.cache is not None:
                self.cache.put(key, record_to_obj(trace))
        return trace

    def _fetch_input_uncached(self, question_id: str, text: str, variant: str) -> InputTrace:
        body = self._post(
            "/v1/completions",
            {
                "model": self.endpoint.model_id,
                "prompt": text,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
                "temperature": 0.0,
            },
        )
        try:
            choice = body["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion response: {body!r}") from exc
        logprobs = choice.get("logprobs")
        if not isinstance(logprobs, dict) or logprobs.get("tokens") is None or logprobs.get("token_logprobs") is None:
            raise CapabilityError(
                f"endpoint {self.endpoint.base_url} does not support echo with logprobs on /v1/completions"
            )
        tokens = logprobs["tokens"]
        lps = logprobs["token_logprobs"]
        slots = tuple(
            None if lp is None else TokenProb(tok, float(lp)) for tok, lp in zip(tokens, lps)
        )
        # vocab_stats are never fabricated from top-k excerpts; file-supplied only
        return InputTrace(question_id=question_id, text=text, input_tokens=slots, variant=variant)

    def _dispatch(self, request):
        if isinstance(request, GenerationRequest):
            return self.fetch_generation(request)
        if isinstance(request, InputRequest):
            return self.fetch_input_logprobs(request)
        raise TypeError(f"not a batch request: {request!r}")

    def run_batch(
        self,
        requests_list: Sequence,
        progress: Callable[[int, int], None] | None = None,
    ) -> BatchResult:
        """Fetch all requests with bounded parallelism; failures never abort.

        results align with the input order, None where a request failed.
        """
        results: list = [None] * len(requests_list)
        failures: list[BatchFailure] = []
        if not requests_list:
            return BatchResult(results, failures)
        done = 0
        with ThreadPoolExecutor(max_workers=self.endpoint.max_parallel) as pool:
            futures = {pool.submit(self._dispatch, req): i for i, req in enumerate(requests_list)}
            for future in as_completed(futures):
                index = futures[future]
                try:
                    results[index] = future.result()
                except (TransportError, CapabilityError, TraceError, ValueError) as exc:
                    failures.append(BatchFailure(index, requests_list[index].question_id, str(exc)))
                done += 1
                if progress is not None:
                    progress(done, len(requests_list))
        failures.sort(key=lambda f: f.index)
        return BatchResult(results, failures)
