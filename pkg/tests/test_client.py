import json
import threading

import pytest

from conftest import FakeTransport, fake_answer_logprobs
from distildetect.client import (
    GenerationRequest,
    InferenceClient,
    InputRequest,
    ModelEndpoint,
    RetryPolicy,
    TraceCache,
    cache_key,
    resolve_api_key,
)
from distildetect.errors import CapabilityError, TransportError
from distildetect.traces import DecodeParams, write_trace_file

DECODE = DecodeParams(strategy="greedy", max_tokens=64, system_prompt="be brief")


def make_client(tmp_path, transport, cache=True, max_parallel=4, retry=RetryPolicy(3, 0.01)):
    endpoint = ModelEndpoint(
        base_url="http://fake.test/v1",
        model_id="fake-model",
        api_key="sk-test",
        timeout=5.0,
        max_parallel=max_parallel,
        retry=retry,
    )
    sleeps = []
    client = InferenceClient(
        endpoint,
        cache_dir=tmp_path / "cache" if cache else None,
        transport=transport,
        sleep=sleeps.append,
    )
    return client, sleeps


class TestEndpoint:
    def test_url_strips_v1_suffix(self):
        e = ModelEndpoint(base_url="http://h:8000/v1", model_id="m")
        assert e.url("/v1/completions") == "http://h:8000/v1/completions"
        e2 = ModelEndpoint(base_url="http://h:8000/", model_id="m")
        assert e2.url("/v1/completions") == "http://h:8000/v1/completions"

    def test_validation(self):
        with pytest.raises(TransportError):
            ModelEndpoint(base_url="x", model_id="m", max_parallel=0)
        with pytest.raises(TransportError):
            ModelEndpoint(base_url="x", model_id="m", timeout=0)

    def test_api_key_resolution(self, monkeypatch):
        monkeypatch.delenv("DISTILDETECT_API_KEY", raising=False)
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        assert resolve_api_key("explicit") == "explicit"
        assert resolve_api_key() is None
        monkeypatch.setenv("OPENAI_API_KEY", "from-openai")
        assert resolve_api_key() == "from-openai"
        monkeypatch.setenv("DISTILDETECT_API_KEY", "from-own")
        assert resolve_api_key() == "from-own"


class TestCacheKey:
    def test_deterministic_and_sensitive(self):
        params = {"max_tokens": 64, "strategy": "greedy", "system_prompt": "s"}
        a = cache_key("m", "generation", "what is 2+2", params)
        assert a == cache_key("m", "generation", "what is 2+2", params)
        assert a != cache_key("m2", "generation", "what is 2+2", params)
        assert a != cache_key("m", "input", "what is 2+2", params)
        assert a != cache_key("m", "generation", "what is 3+3", params)
        assert a != cache_key("m", "generation", "what is 2+2", dict(params, max_tokens=32))


class TestTraceCache:
    def test_put_get_roundtrip(self, tmp_path):
        cache = TraceCache(tmp_path)
        cache.put("k1", {"a": 1})
        assert cache.get("k1") == {"a": 1}
        assert TraceCache(tmp_path).get("k1") == {"a": 1}

    def test_corruption_is_a_miss(self, tmp_path):
        cache = TraceCache(tmp_path)
        cache.put("k1", {"a": 1})
        path = tmp_path / "k1.json"
        entry = json.loads(path.read_text())
        entry["payload"]["a"] = 2
        path.write_text(json.dumps(entry))
        assert TraceCache(tmp_path).get("k1") is None
        path.write_text("truncated{")
        assert TraceCache(tmp_path).get("k1") is None


class TestFetchGeneration:
    def test_passthrough(self, tmp_path):
        transport = FakeTransport()
        client, _ = make_client(tmp_path, transport)
        req = GenerationRequest("q1", "what is 2+2", DECODE, "member")
        trace = client.fetch_generation(req)
        assert trace.question_id == "q1"
        assert trace.label == "member"
        assert trace.model_id == "fake-model"
        assert [t.logprob for t in trace.generated] == fake_answer_logprobs("what is 2+2")
        url, payload, headers = transport.calls[0]
        assert payload["temperature"] == 0.0
        assert payload["logprobs"] is True
        assert payload["messages"][0] == {"role": "system", "content": "be brief"}
        assert headers["Authorization"] == "Bearer sk-test"

    def test_cache_hit_skips_network(self, tmp_path):
        transport = FakeTransport()
        client, _ = make_client(tmp_path, transport)
        req = GenerationRequest("q1", "question", DECODE)
        first = client.fetch_generation(req)
        second = client.fetch_generation(req)
        assert len(transport.calls) == 1
        assert write_trace_file([first]) == write_trace_file([second])

    def test_cache_survives_process_restart(self, tmp_path):
        transport = FakeTransport()
        client, _ = make_client(tmp_path, transport)
        req = GenerationRequest("q1", "question", DECODE)
        first = client.fetch_generation(req)
        transport2 = FakeTransport()
        client2, _ = make_client(tmp_path, transport2)
        second = client2.fetch_generation(req)
        assert transport2.calls == []
        assert first == second

    def test_cache_hit_rebinds_request_identity(self, tmp_path):
        transport = FakeTransport()
        client, _ = make_client(tmp_path, transport)
        client.fetch_generation(GenerationRequest("q1", "question", DECODE, "unknown"))
        relabeled = client.fetch_generation(GenerationRequest("q9", "question", DECODE, "member"))
        assert len(transport.calls) == 1
        assert relabeled.question_id == "q9"
        assert relabeled.label == "member"

    def test_missing_logprobs_is_a_capability_error(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport(chat_logprobs=False))
        with pytest.raises(CapabilityError, match="logprobs"):
            client.fetch_generation(GenerationRequest("q1", "question", DECODE))


class TestFetchInput:
    def test_first_slot_is_null(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport())
        trace = client.fetch_input_logprobs(InputRequest("q1", "Some Text", "original"))
        assert trace.input_tokens[0] is None
        assert all(t is not None for t in trace.input_tokens[1:])
        assert trace.variant == "original"
        assert trace.vocab_stats is None

    def test_lowercased_variant_requests_lowered_text(self, tmp_path):
        transport = FakeTransport()
        client, _ = make_client(tmp_path, transport)
        trace = client.fetch_input_logprobs(InputRequest("q1", "ABC", "lowercased"))
        assert transport.calls[0][1]["prompt"] == "abc"
        assert trace.text == "abc"
        # distinct cache identity from the original variant
        client.fetch_input_logprobs(InputRequest("q1", "ABC", "original"))
        assert len(transport.calls) == 2

    def test_echo_payload_shape(self, tmp_path):
        transport = FakeTransport()
        client, _ = make_client(tmp_path, transport)
        client.fetch_input_logprobs(InputRequest("q1", "text", "original"))
        payload = transport.calls[0][1]
        assert payload["echo"] is True
        assert payload["max_tokens"] == 0
        assert payload["logprobs"] == 0

    def test_no_echo_support_is_a_capability_error(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport(echo_logprobs=False))
        with pytest.raises(CapabilityError, match="echo"):
            client.fetch_input_logprobs(InputRequest("q1", "text", "original"))


class TestRetries:
    def test_retryable_statuses_then_success(self, tmp_path):
        transport = FakeTransport(status_script=[429, 503, 200])
        client, sleeps = make_client(tmp_path, transport)
        trace = client.fetch_generation(GenerationRequest("q1", "question", DECODE))
        assert len(trace.generated) > 0
        assert len(transport.calls) == 3
        assert len(sleeps) == 2
        assert sleeps[1] > sleeps[0]  # exponential backoff grows

    def test_non_retryable_fails_immediately(self, tmp_path):
        transport = FakeTransport(status_script=[400])
        client, sleeps = make_client(tmp_path, transport)
        with pytest.raises(TransportError, match="400"):
            client.fetch_generation(GenerationRequest("q1", "question", DECODE))
        assert len(transport.calls) == 1
        assert sleeps == []

    def test_exhausted_retries_raise(self, tmp_path):
        transport = FakeTransport(status_script=[500, 500, 500])
        client, _ = make_client(tmp_path, transport, retry=RetryPolicy(3, 0.01))
        with pytest.raises(TransportError, match="after 3 attempts"):
            client.fetch_generation(GenerationRequest("q1", "question", DECODE))
        assert len(transport.calls) == 3


class TestRunBatch:
    def test_empty_batch(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport())
        result = client.run_batch([])
        assert result.results == [] and result.failures == []

    def test_order_preserved_under_concurrency(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport(delay=0.005), max_parallel=8)
        reqs = [GenerationRequest(f"q{i}", f"question number {i}", DECODE) for i in range(20)]
        result = client.run_batch(reqs)
        assert [t.question_id for t in result.results] == [f"q{i}" for i in range(20)]
        assert result.failures == []

    def test_in_flight_never_exceeds_max_parallel(self, tmp_path):
        transport = FakeTransport(delay=0.02)
        client, _ = make_client(tmp_path, transport, max_parallel=3)
        reqs = [GenerationRequest(f"q{i}", f"question {i}", DECODE) for i in range(10)]
        client.run_batch(reqs)
        assert transport.max_in_flight <= 3

    def test_partial_failure_is_recorded_not_raised(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport())
        reqs = [GenerationRequest(f"q{i}", f"question {i}", DECODE) for i in range(4)]
        reqs.insert(2, GenerationRequest("qbad", "please FAIL now", DECODE))
        result = client.run_batch(reqs)
        assert sum(t is not None for t in result.results) == 4
        assert result.results[2] is None
        assert len(result.failures) == 1
        assert result.failures[0].question_id == "qbad"
        assert result.failures[0].index == 2

    def test_progress_callback(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport())
        seen = []
        reqs = [GenerationRequest(f"q{i}", f"question {i}", DECODE) for i in range(5)]
        client.run_batch(reqs, progress=lambda done, total: seen.append((done, total)))
        assert len(seen) == 5
        assert seen[-1] == (5, 5)

    def test_mixed_request_kinds(self, tmp_path):
        client, _ = make_client(tmp_path, FakeTransport())
        result = client.run_batch(
            [
                GenerationRequest("q1", "question", DECODE),
                InputRequest("q1", "question", "original"),
            ]
        )
        assert result.results[0].question_id == "q1"
        assert result.results[1].input_tokens[0] is None

    def test_duplicate_prompts_hit_network_once(self, tmp_path):
        transport = FakeTransport(delay=0.01)
        client, _ = make_client(tmp_path, transport, max_parallel=6)
        reqs = [GenerationRequest(f"q{i}", "the same question", DECODE) for i in range(6)]
        result = client.run_batch(reqs)
        assert len(transport.calls) == 1
        assert all(t is not None for t in result.results)


def test_key_locks_are_shared_across_threads(tmp_path):
    client, _ = make_client(tmp_path, FakeTransport())
    locks = []
    done = threading.Barrier(2)

    def grab():
        locks.append(client._key_lock("same-key"))
        done.wait()

    threads = [threading.Thread(target=grab) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert locks[0] is locks[1]
