"""Trace data model and line-delimited JSON wire format.

Two record kinds share one file format, discriminated by a "kind" field:

  generation record (one audited question, the model's greedy answer):
    {"kind": "generation", "question_id": ..., "question_text": ...,
     "label": "member"|"nonmember"|"unknown", "model_id": ...,
     "decode": {"strategy": "greedy", "max_tokens": ..., "system_prompt": ...},
     "generated": [{"t": <token>, "lp": <logprob>}, ...]}

  input record (per-token conditional logprobs of a text under the model):
    {"kind": "input", "question_id": ..., "text": ...,
     "variant": "original"|"lowercased"|"neighbor",
     "input_tokens": [null-or-{"t","lp"}, {"t","lp"}, ...],
     "vocab_stats": [{"mu": ..., "sigma": ...}, ...]}   # optional

One UTF-8 JSON object per line. The first input token has no conditioning
prefix, so causal models assign it no conditional probability; that is
stored as an explicit null slot and skipped by every consumer. All
logprobs are natural-log and must be finite and <= 0. Unknown extra
fields on a record are preserved verbatim so foreign annotations survive
a parse/write cycle. Token objects themselves are exactly {"t", "lp"}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Union

from .errors import TraceParseError, TraceValidationError

KIND_GENERATION = "generation"
KIND_INPUT = "input"

LABEL_MEMBER = "member"
LABEL_NONMEMBER = "nonmember"
LABEL_UNKNOWN = "unknown"
LABELS = (LABEL_MEMBER, LABEL_NONMEMBER, LABEL_UNKNOWN)

VARIANT_ORIGINAL = "original"
VARIANT_LOWERCASED = "lowercased"
VARIANT_NEIGHBOR = "neighbor"
VARIANTS = (VARIANT_ORIGINAL, VARIANT_LOWERCASED, VARIANT_NEIGHBOR)

MEMBER_LOW = "member_low"
MEMBER_HIGH = "member_high"
ORIENTATIONS = (MEMBER_LOW, MEMBER_HIGH)


def _require_finite_logprob(value, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TraceValidationError(f"{context}: logprob must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise TraceValidationError(f"{context}: logprob must be finite, got {value!r}")
    if value > 0.0:
        raise TraceValidationError(f"{context}: logprob must be <= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class TokenProb:
    """One token with its natural-log probability (finite, <= 0)."""

    text: str
    logprob: float

    def __post_init__(self):
        if not isinstance(self.text, str):
            raise TraceValidationError(f"token text must be a string, got {self.text!r}")
        object.__setattr__(self, "logprob", _require_finite_logprob(self.logprob, f"token {self.text!r}"))


def prob_of(token: TokenProb) -> float:
    """Probability of the token, exp(logprob). Always in (0, 1]."""
    return math.exp(token.logprob)


@dataclass(frozen=True)
class VocabStat:
    """Mean/stddev of next-token logprobs over the vocabulary at one position."""

    mu: float
    sigma: float

    def __post_init__(self):
        for name in ("mu", "sigma"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
                raise TraceValidationError(f"vocab_stats {name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.sigma < 0.0:
            raise TraceValidationError(f"vocab_stats sigma must be >= 0, got {self.sigma!r}")


@dataclass(frozen=True)
class DecodeParams:
    strategy: str = "greedy"
    max_tokens: int = 1024
    system_prompt: str = ""

    def __post_init__(self):
        if self.strategy != "greedy":
            raise TraceValidationError(f"decode strategy must be 'greedy', got {self.strategy!r}")
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens < 1:
            raise TraceValidationError(f"decode max_tokens must be a positive integer, got {self.max_tokens!r}")
        if not isinstance(self.system_prompt, str):
            raise TraceValidationError("decode system_prompt must be a string")


@dataclass(frozen=True)
class GenerationTrace:
    """A question plus the model's generated tokens with their logprobs.

    generated may be empty (the model emitted only a stop token); detectors
    treat that as an error, the data model does not.
    """

    question_id: str
    question_text: str
    label: str
    generated: tuple[TokenProb, ...]
    model_id: str
    decode: DecodeParams
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("question_id", "question_text", "model_id"):
            if not isinstance(getattr(self, name), str):
                raise TraceValidationError(f"generation {name} must be a string")
        if not self.question_id:
            raise TraceValidationError("generation question_id must be non-empty")
        if self.label not in LABELS:
            raise TraceValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        if not isinstance(self.decode, DecodeParams):
            raise TraceValidationError("decode must be a DecodeParams")
        object.__setattr__(self, "generated", tuple(self.generated))
        for tok in self.generated:
            if not isinstance(tok, TokenProb):
                raise TraceValidationError(f"generated entries must be TokenProb, got {tok!r}")


@dataclass(frozen=True)
class InputTrace:
    """Per-token conditional logprobs of an input text.

    input_tokens holds TokenProb entries; only index 0 may be None (the
    prefix-free first token). vocab_stats, when present, aligns 1:1 with
    input_tokens including the null slot.
    """

    question_id: str
    text: str
    input_tokens: tuple
    variant: str = VARIANT_ORIGINAL
    vocab_stats: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("question_id", "text"):
            if not isinstance(getattr(self, name), str):
                raise TraceValidationError(f"input {name} must be a string")
        if not self.question_id:
            raise TraceValidationError("input question_id must be non-empty")
        if self.variant not in VARIANTS:
            raise TraceValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "input_tokens", tuple(self.input_tokens))
        for i, tok in enumerate(self.input_tokens):
            if tok is None:
                if i != 0:
                    raise TraceValidationError(f"null token slot only allowed at position 0, found at {i}")
            elif not isinstance(tok, TokenProb):
                raise TraceValidationError(f"input_tokens entries must be TokenProb or null, got {tok!r}")
        if self.vocab_stats is not None:
            object.__setattr__(self, "vocab_stats", tuple(self.vocab_stats))
            if len(self.vocab_stats) != len(self.input_tokens):
                raise TraceValidationError(
                    f"vocab_stats length {len(self.vocab_stats)} != input_tokens length {len(self.input_tokens)}"
                )
            for vs in self.vocab_stats:
                if not isinstance(vs, VocabStat):
                    raise TraceValidationError(f"vocab_stats entries must be VocabStat, got {vs!r}")


TraceRecord = Union[GenerationTrace, InputTrace]


@dataclass(frozen=True)
class DetectorScore:
    """One detector's verdict on one question."""

    question_id: str
    detector: str
    score: float
    orientation: str

    def __post_init__(self):
        if not isinstance(self.question_id, str) or not self.question_id:
            raise TraceValidationError("score question_id must be a non-empty string")
        if not isinstance(self.detector, str) or not self.detector:
            raise TraceValidationError("score detector must be a non-empty string")
        if isinstance(self.score, bool) or not isinstance(self.score, (int, float)) or not math.isfinite(float(self.score)):
            raise TraceValidationError(f"score must be finite, got {self.score!r}")
        object.__setattr__(self, "score", float(self.score))
        if self.orientation not in ORIENTATIONS:
            raise TraceValidationError(f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}")


_GEN_FIELDS = ("kind", "question_id", "question_text", "label", "model_id", "decode", "generated")
_INPUT_FIELDS = ("kind", "question_id", "text", "variant", "input_tokens", "vocab_stats")


def _token_from_obj(obj, context: str) -> TokenProb:
    if not isinstance(obj, dict) or "t" not in obj or "lp" not in obj:
        raise TraceValidationError(f"{context}: token entries must be objects with 't' and 'lp'")
    if not isinstance(obj["t"], str):
        raise TraceValidationError(f"{context}: token 't' must be a string")
    return TokenProb(obj["t"], obj["lp"])


def _require_str(obj: dict, key: str, context: str) -> str:
    if key not in obj:
        raise TraceValidationError(f"{context}: missing field {key!r}")
    if not isinstance(obj[key], str):
        raise TraceValidationError(f"{context}: field {key!r} must be a string")
    return obj[key]


def _gen_from_obj(obj: dict) -> GenerationTrace:
    ctx = "generation record"
    decode_obj = obj.get("decode")
    if not isinstance(decode_obj, dict):
        raise TraceValidationError(f"{ctx}: missing or non-object 'decode'")
    unknown = set(decode_obj) - {"strategy", "max_tokens", "system_prompt"}
    if unknown:
        raise TraceValidationError(f"{ctx}: unknown decode fields {sorted(unknown)}")
    decode = DecodeParams(
        strategy=decode_obj.get("strategy", "greedy"),
        max_tokens=decode_obj.get("max_tokens", 1024),
        system_prompt=decode_obj.get("system_prompt", ""),
    )
    gen_obj = obj.get("generated")
    if not isinstance(gen_obj, list):
        raise TraceValidationError(f"{ctx}: missing or non-list 'generated'")
    tokens = tuple(_token_from_obj(t, ctx) for t in gen_obj)
    extra = {k: v for k, v in obj.items() if k not in _GEN_FIELDS}
    return GenerationTrace(
        question_id=_require_str(obj, "question_id", ctx),
        question_text=_require_str(obj, "question_text", ctx),
        label=obj.get("label", LABEL_UNKNOWN),
        generated=tokens,
        model_id=_require_str(obj, "model_id", ctx),
        decode=decode,
        extra=extra,
    )


def _input_from_obj(obj: dict) -> InputTrace:
    ctx = "input record"
    toks_obj = obj.get("input_tokens")
    if not isinstance(toks_obj, list):
        raise TraceValidationError(f"{ctx}: missing or non-list 'input_tokens'")
    slots = tuple(None if t is None else _token_from_obj(t, ctx) for t in toks_obj)
    vs_obj = obj.get("vocab_stats")
    vocab_stats = None
    if vs_obj is not None:
        if not isinstance(vs_obj, list):
            raise TraceValidationError(f"{ctx}: 'vocab_stats' must be a list or null")
        stats = []
        for entry in vs_obj:
            if not isinstance(entry, dict) or "mu" not in entry or "sigma" not in entry:
                raise TraceValidationError(f"{ctx}: vocab_stats entries must be objects with 'mu' and 'sigma'")
            stats.append(VocabStat(entry["mu"], entry["sigma"]))
        vocab_stats = tuple(stats)
    extra = {k: v for k, v in obj.items() if k not in _INPUT_FIELDS}
    return InputTrace(
        question_id=_require_str(obj, "question_id", ctx),
        text=_require_str(obj, "text", ctx),
        input_tokens=slots,
        variant=obj.get("variant", VARIANT_ORIGINAL),
        vocab_stats=vocab_stats,
        extra=extra,
    )


def record_from_obj(obj: dict) -> TraceRecord:
    """Build a trace record from a decoded JSON object."""
    kind = obj.get("kind")
    if kind == KIND_GENERATION:
        return _gen_from_obj(obj)
    if kind == KIND_INPUT:
        return _input_from_obj(obj)
    raise TraceValidationError(f"unknown record kind {kind!r}")


def record_to_obj(record: TraceRecord) -> dict:
    """Serialize a trace record to a JSON-ready dict in canonical field order."""
    if isinstance(record, GenerationTrace):
        obj = {
            "kind": KIND_GENERATION,
            "question_id": record.question_id,
            "question_text": record.question_text,
            "label": record.label,
            "model_id": record.model_id,
            "decode": {
                "strategy": record.decode.strategy,
                "max_tokens": record.decode.max_tokens,
                "system_prompt": record.decode.system_prompt,
            },
            "generated": [{"t": t.text, "lp": t.logprob} for t in record.generated],
        }
    elif isinstance(record, InputTrace):
        obj = {
            "kind": KIND_INPUT,
            "question_id": record.question_id,
            "text": record.text,
            "variant": record.variant,
            "input_tokens": [None if t is None else {"t": t.text, "lp": t.logprob} for t in record.input_tokens],
        }
        if record.vocab_stats is not None:
            obj["vocab_stats"] = [{"mu": v.mu, "sigma": v.sigma} for v in record.vocab_stats]
    else:
        raise TraceValidationError(f"not a trace record: {record!r}")
    for key, value in record.extra.items():
        if key in obj:
            raise TraceValidationError(f"extra field {key!r} collides with a record field")
        obj[key] = value
    return obj


def _iter_lines(stream) -> Iterator[bytes]:
    if isinstance(stream, (bytes, bytearray)):
        yield from stream.splitlines(keepends=False)
        return
    for line in stream:
        if isinstance(line, str):
            line = line.encode("utf-8")
        yield line


def parse_trace_file(stream: IO[bytes] | Iterable[bytes] | bytes) -> list[TraceRecord]:
    """Parse a line-delimited trace stream, validating every record.

    Duplicate identity is (question_id,) for generation records and
    (question_id, variant) for input records; the neighbor variant is
    exempt because one question legitimately has many neighbors.
    Raises TraceParseError / TraceValidationError naming the line.
    """
    records: list[TraceRecord] = []
    seen_gen: set[str] = set()
    seen_input: set[tuple[str, str]] = set()
    for line_no, raw in enumerate(_iter_lines(stream), start=1):
        if not raw.strip():
            continue
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceParseError(f"line {line_no}: not valid UTF-8 ({exc})", line_no) from exc
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line {line_no}: invalid JSON ({exc.msg})", line_no) from exc
        if not isinstance(obj, dict):
            raise TraceParseError(f"line {line_no}: record must be a JSON object", line_no)
        try:
            record = record_from_obj(obj)
        except TraceValidationError as exc:
            raise TraceValidationError(f"line {line_no}: {exc}", line_no) from exc
        if isinstance(record, GenerationTrace):
            if record.question_id in seen_gen:
                raise TraceValidationError(
                    f"line {line_no}: duplicate generation question_id {record.question_id!r}", line_no
                )
            seen_gen.add(record.question_id)
        else:
            key = (record.question_id, record.variant)
            if record.variant != VARIANT_NEIGHBOR and key in seen_input:
                raise TraceValidationError(
                    f"line {line_no}: duplicate input question_id {record.question_id!r} "
                    f"for variant {record.variant!r}",
                    line_no,
                )
            seen_input.add(key)
        records.append(record)
    return records


def write_trace_file(records: Iterable[TraceRecord]) -> bytes:
    """Serialize records to line-delimited JSON bytes.

    Floats use shortest round-trip decimals, so parse(write(r)) == r
    field for field.
    """
    out = bytearray()
    for record in records:
        obj = record_to_obj(record)
        out += json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(",", ":")).encode("utf-8")
        out += b"\n"
    return bytes(out)


def load_trace_file(path) -> list[TraceRecord]:
    with open(path, "rb") as fh:
        return parse_trace_file(fh)


def save_trace_file(records: Iterable[TraceRecord], path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_trace_file(records))


def score_to_obj(score: DetectorScore) -> dict:
    return {
        "question_id": score.question_id,
        "detector": score.detector,
        "score": score.score,
        "orientation": score.orientation,
    }


def score_from_obj(obj: dict) -> DetectorScore:
    try:
        return DetectorScore(obj["question_id"], obj["detector"], obj["score"], obj["orientation"])
    except KeyError as exc:
        raise TraceValidationError(f"score row missing field {exc.args[0]!r}") from exc
