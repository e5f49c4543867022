"""Shared builders: quick trace construction and a fake OpenAI-style endpoint."""

import math
import random
import threading
import time

import pytest

from distildetect.traces import (
    DecodeParams,
    GenerationTrace,
    InputTrace,
    TokenProb,
    VocabStat,
)

DECODE = DecodeParams(strategy="greedy", max_tokens=512, system_prompt="sys")


def gen_trace(probs=None, logprobs=None, qid="q1", label="unknown", model_id="test-model"):
    if logprobs is None:
        logprobs = [math.log(p) if p < 1.0 else 0.0 for p in probs]
    return GenerationTrace(
        question_id=qid,
        question_text=f"question for {qid}",
        label=label,
        generated=tuple(TokenProb(f"t{i}", lp) for i, lp in enumerate(logprobs)),
        model_id=model_id,
        decode=DECODE,
    )


def input_trace(logprobs, qid="q1", text=None, variant="original", stats=None):
    """logprobs may contain None at slot 0; stats as (mu, sigma) pairs."""
    slots = tuple(None if lp is None else TokenProb(f"i{i}", lp) for i, lp in enumerate(logprobs))
    vocab = None if stats is None else tuple(VocabStat(mu, sigma) for mu, sigma in stats)
    return InputTrace(
        question_id=qid,
        text=text if text is not None else f"input text {qid}",
        input_tokens=slots,
        variant=variant,
        vocab_stats=vocab,
    )


def random_logprobs(rnd: random.Random, n: int) -> list:
    """Mix saturated, near-one, and bulk tokens; includes exact prob 1.0."""
    out = []
    for _ in range(n):
        u = rnd.random()
        if u < 0.25:
            out.append(0.0)
        elif u < 0.45:
            out.append(math.log(1.0 - rnd.random() * 0.01 - 1e-9))
        else:
            out.append(math.log(max(rnd.random(), 1e-9)))
    return out


def random_gen_trace(rnd: random.Random, qid: str, min_len=0, max_len=500, label="unknown"):
    n = rnd.randint(min_len, max_len)
    return gen_trace(logprobs=random_logprobs(rnd, n), qid=qid, label=label)


def random_input_trace(rnd: random.Random, qid: str, max_len=200, with_stats=False, variant="original"):
    n = rnd.randint(1, max_len)
    lps = [None] + random_logprobs(rnd, n - 1) if n > 1 else [None]
    stats = None
    if with_stats:
        stats = [(rnd.uniform(-8, 0), rnd.uniform(0, 3)) for _ in lps]
    return input_trace(lps, qid=qid, variant=variant, stats=stats)


def fake_answer_logprobs(prompt: str) -> list:
    """What the fake endpoint answers for a prompt; shared with expectations."""
    seed = sum(ord(c) for c in prompt)
    rnd = random.Random(seed)
    return [-rnd.random() * 2.0 for _ in range(3 + seed % 4)]


class FakeTransport:
    """Stands in for requests.post against an OpenAI-compatible server.

    Prompts containing "FAIL" get a 400. status_script, when non-empty,
    overrides the next responses with the scripted status codes.
    """

    def __init__(self, chat_logprobs=True, echo_logprobs=True, delay=0.0, status_script=None):
        self.chat_logprobs = chat_logprobs
        self.echo_logprobs = echo_logprobs
        self.delay = delay
        self.status_script = list(status_script or [])
        self.calls = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def __call__(self, url, payload, headers, timeout):
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.calls.append((url, payload, headers))
            scripted = self.status_script.pop(0) if self.status_script else None
        try:
            if self.delay:
                time.sleep(self.delay)
            if scripted is not None and scripted != 200:
                return scripted, {"error": {"message": f"scripted {scripted}"}}
            if url.endswith("/v1/chat/completions"):
                return self._chat(payload)
            if url.endswith("/v1/completions"):
                return self._completions(payload)
            return 404, {"error": {"message": f"no route {url}"}}
        finally:
            with self._lock:
                self.in_flight -= 1

    def _chat(self, payload):
        prompt = payload["messages"][-1]["content"]
        if "FAIL" in prompt:
            return 400, {"error": {"message": "rejected by fake server"}}
        if not self.chat_logprobs:
            return 200, {"choices": [{"message": {"content": "x"}}]}
        content = [
            {"token": f"t{i}", "logprob": lp}
            for i, lp in enumerate(fake_answer_logprobs(prompt))
        ]
        return 200, {"choices": [{"logprobs": {"content": content}, "message": {"content": "x"}}]}

    def _completions(self, payload):
        prompt = payload["prompt"]
        if "FAIL" in prompt:
            return 400, {"error": {"message": "rejected by fake server"}}
        if not self.echo_logprobs:
            return 200, {"choices": [{"text": prompt}]}
        lps = fake_answer_logprobs(prompt)
        return 200, {
            "choices": [
                {
                    "logprobs": {
                        "tokens": [f"i{i}" for i in range(len(lps) + 1)],
                        "token_logprobs": [None] + lps,
                    }
                }
            ]
        }


@pytest.fixture
def fake_transport():
    return FakeTransport()
