"""Membership detectors over generation and input traces.

Every detector is a pure function from trace(s) to a DetectorScore and
declares a fixed orientation: member_low detectors produce smaller scores
on questions the model was trained on, member_high the opposite. All
arithmetic is in natural log space.

The primary detector, token_deviation, looks only at the generated
answer: over the first m tokens it measures how far each token's
probability falls below a reference tau, keeps the tokens that fall
short at all (the outliers), and averages their deviations raised to a
damping exponent alpha:

    d_i = max(0, tau - p_i)
    E   = #{i <= m : p_i < tau}
    score = (1/E) * sum(d_i ** alpha)        (0 if E == 0)

With tau=1 nearly every token is an outlier, but near-deterministic
tokens contribute almost nothing once alpha < 1 damps large deviations
less than it inflates small ones; questions the model memorized produce
many near-deterministic tokens and therefore low scores.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyGenerationError,
    MismatchedPairError,
    NoScoredTokensError,
    ScoringError,
    UnsupportedDetectorError,
)
from .traces import MEMBER_HIGH, MEMBER_LOW, DetectorScore, GenerationTrace, InputTrace

TOKEN_DEVIATION = "token_deviation"
GENERATED_PERPLEXITY = "generated_perplexity"
GENERATED_MIN_K = "generated_min_k"
MEAN_PROBABILITY = "mean_probability"
NEAR_DETERMINISTIC = "near_deterministic"
INPUT_PERPLEXITY = "perplexity"
ZLIB = "zlib"
LOWERCASE = "lowercase"
MIN_K = "min_k"
MIN_K_PP = "min_k_pp"
NEIGHBOR = "neighbor"

#: Detectors that read the generated answer.
GENERATION_DETECTORS = (
    TOKEN_DEVIATION,
    GENERATED_PERPLEXITY,
    GENERATED_MIN_K,
    MEAN_PROBABILITY,
    NEAR_DETERMINISTIC,
)
#: Detectors that read input-token logprobs of the question text.
INPUT_DETECTORS = (INPUT_PERPLEXITY, ZLIB, MIN_K, MIN_K_PP)
#: Detectors needing more than one input trace per question.
PAIRED_DETECTORS = (LOWERCASE, NEIGHBOR)

ORIENTATION = {
    TOKEN_DEVIATION: MEMBER_LOW,
    GENERATED_PERPLEXITY: MEMBER_LOW,
    GENERATED_MIN_K: MEMBER_HIGH,
    MEAN_PROBABILITY: MEMBER_HIGH,
    NEAR_DETERMINISTIC: MEMBER_HIGH,
    INPUT_PERPLEXITY: MEMBER_LOW,
    ZLIB: MEMBER_LOW,
    LOWERCASE: MEMBER_LOW,
    MIN_K: MEMBER_HIGH,
    MIN_K_PP: MEMBER_HIGH,
    NEIGHBOR: MEMBER_LOW,
}

ZLIB_LEVEL = 6
SIGMA_FLOOR = 1e-6
NEAR_DETERMINISTIC_THRESHOLD = 0.99
NEAR_DETERMINISTIC_LIMIT = 300


@dataclass(frozen=True)
class DeviationParams:
    """token_deviation hyperparameters: reference tau, exponent alpha, window m."""

    tau: float = 1.0
    alpha: float = 0.6
    m: int = 300

    def __post_init__(self):
        if not (isinstance(self.tau, (int, float)) and 0.0 < float(self.tau) <= 1.0):
            raise ScoringError(f"tau must be in (0, 1], got {self.tau!r}")
        if not (isinstance(self.alpha, (int, float)) and float(self.alpha) > 0.0):
            raise ScoringError(f"alpha must be > 0, got {self.alpha!r}")
        if isinstance(self.m, bool) or not isinstance(self.m, int) or self.m < 1:
            raise ScoringError(f"m must be a positive integer, got {self.m!r}")
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class MinKParams:
    """Min-K% hyperparameters; limit caps generated tokens, input variants use all."""

    k_percent: float = 20.0
    limit: int = 1000

    def __post_init__(self):
        if not (isinstance(self.k_percent, (int, float)) and 0.0 < float(self.k_percent) <= 100.0):
            raise ScoringError(f"k_percent must be in (0, 100], got {self.k_percent!r}")
        if isinstance(self.limit, bool) or not isinstance(self.limit, int) or self.limit < 1:
            raise ScoringError(f"limit must be a positive integer, got {self.limit!r}")
        object.__setattr__(self, "k_percent", float(self.k_percent))


def _generated_logprobs(trace: GenerationTrace, limit: int | None) -> np.ndarray:
    if not trace.generated:
        raise EmptyGenerationError(f"{trace.question_id}: generation trace has no tokens")
    toks = trace.generated if limit is None else trace.generated[:limit]
    return np.array([t.logprob for t in toks], dtype=np.float64)


def _input_logprobs(trace: InputTrace) -> np.ndarray:
    vals = [t.logprob for t in trace.input_tokens if t is not None]
    if not vals:
        raise NoScoredTokensError(f"{trace.question_id}: input trace has no scored tokens")
    return np.array(vals, dtype=np.float64)


def _min_k_count(n: int, k_percent: float) -> int:
    return max(1, math.floor(k_percent * n / 100.0))


def deviation_score(trace: GenerationTrace, params: DeviationParams | None = None) -> DetectorScore:
    """Mean damped below-reference deviation over the first m generated tokens.

    A window with no outlier (every p_i >= tau) legitimately scores 0.0,
    the strongest member verdict; an empty generation is an error instead.
    """
    p = params or DeviationParams()
    lps = _generated_logprobs(trace, p.m)
    probs = np.exp(lps)
    outliers = probs < p.tau
    count = int(np.count_nonzero(outliers))
    if count == 0:
        value = 0.0
    else:
        dev = (p.tau - probs[outliers]) ** p.alpha
        value = float(dev.sum() / count)
    return DetectorScore(trace.question_id, TOKEN_DEVIATION, value, MEMBER_LOW)


def generated_perplexity(trace: GenerationTrace, limit: int = 1000) -> DetectorScore:
    """exp(-mean logprob) over the first `limit` generated tokens."""
    lps = _generated_logprobs(trace, limit)
    value = float(math.exp(-lps.mean()))
    return DetectorScore(trace.question_id, GENERATED_PERPLEXITY, value, MEMBER_LOW)


def generated_min_k(trace: GenerationTrace, params: MinKParams | None = None) -> DetectorScore:
    """Mean of the n_k lowest logprobs among the first `limit` generated tokens."""
    p = params or MinKParams()
    lps = _generated_logprobs(trace, p.limit)
    n_k = _min_k_count(lps.size, p.k_percent)
    value = float(np.sort(lps)[:n_k].mean())
    return DetectorScore(trace.question_id, GENERATED_MIN_K, value, MEMBER_HIGH)


def mean_probability(trace: GenerationTrace, limit: int = 1000) -> DetectorScore:
    """Plain mean token probability; the undamped ablation baseline."""
    lps = _generated_logprobs(trace, limit)
    value = float(np.exp(lps).mean())
    return DetectorScore(trace.question_id, MEAN_PROBABILITY, value, MEMBER_HIGH)


def near_deterministic_fraction(
    trace: GenerationTrace,
    threshold: float = NEAR_DETERMINISTIC_THRESHOLD,
    limit: int = NEAR_DETERMINISTIC_LIMIT,
) -> float:
    """Fraction of the first `limit` generated tokens with prob >= threshold."""
    lps = _generated_logprobs(trace, limit)
    return float(np.count_nonzero(np.exp(lps) >= threshold) / lps.size)


def near_deterministic_score(
    trace: GenerationTrace,
    threshold: float = NEAR_DETERMINISTIC_THRESHOLD,
    limit: int = NEAR_DETERMINISTIC_LIMIT,
) -> DetectorScore:
    value = near_deterministic_fraction(trace, threshold, limit)
    return DetectorScore(trace.question_id, NEAR_DETERMINISTIC, value, MEMBER_HIGH)


def input_perplexity(trace: InputTrace) -> DetectorScore:
    """exp(-mean logprob) over non-null input slots."""
    lps = _input_logprobs(trace)
    value = float(math.exp(-lps.mean()))
    return DetectorScore(trace.question_id, INPUT_PERPLEXITY, value, MEMBER_LOW)


def zlib_score(trace: InputTrace) -> DetectorScore:
    """Total NLL of the text divided by its zlib-compressed byte length.

    Compression is the zlib container at DEFLATE level 6, frozen so scores
    are comparable across runs; the divisor choice is recorded in eval
    report notes.
    """
    if not trace.text:
        raise ScoringError(f"{trace.question_id}: zlib requires non-empty text")
    nll = -math.fsum(t.logprob for t in trace.input_tokens if t is not None)
    compressed = len(zlib.compress(trace.text.encode("utf-8"), ZLIB_LEVEL))
    return DetectorScore(trace.question_id, ZLIB, nll / compressed, MEMBER_LOW)


def lowercase_score(original: InputTrace, lowered: InputTrace) -> DetectorScore:
    """Perplexity ratio of the original text to its lowercased form."""
    if original.question_id != lowered.question_id:
        raise MismatchedPairError(
            f"lowercase pair ids differ: {original.question_id!r} vs {lowered.question_id!r}"
        )
    if lowered.text != original.text.lower():
        raise MismatchedPairError(f"{original.question_id}: lowered text is not the lowercase of the original")
    ratio = math.exp(-_input_logprobs(original).mean()) / math.exp(-_input_logprobs(lowered).mean())
    return DetectorScore(original.question_id, LOWERCASE, ratio, MEMBER_LOW)


def min_k_score(trace: InputTrace, params: MinKParams | None = None) -> DetectorScore:
    """Min-K% over all non-null input slots (the limit applies to generated text only)."""
    p = params or MinKParams()
    lps = _input_logprobs(trace)
    n_k = _min_k_count(lps.size, p.k_percent)
    value = float(np.sort(lps)[:n_k].mean())
    return DetectorScore(trace.question_id, MIN_K, value, MEMBER_HIGH)


def min_k_pp_score(trace: InputTrace, params: MinKParams | None = None) -> DetectorScore:
    """Min-K%++: per-position vocabulary z-scores, then the Min-K mean.

    z_i = (logprob_i - mu_i) / max(sigma_i, 1e-6); requires vocab_stats.
    """
    p = params or MinKParams()
    if trace.vocab_stats is None:
        raise UnsupportedDetectorError(f"{trace.question_id}: min_k_pp requires vocab_stats")
    zs = [
        (tok.logprob - vs.mu) / max(vs.sigma, SIGMA_FLOOR)
        for tok, vs in zip(trace.input_tokens, trace.vocab_stats)
        if tok is not None
    ]
    if not zs:
        raise NoScoredTokensError(f"{trace.question_id}: input trace has no scored tokens")
    n_k = _min_k_count(len(zs), p.k_percent)
    value = float(np.sort(np.array(zs, dtype=np.float64))[:n_k].mean())
    return DetectorScore(trace.question_id, MIN_K_PP, value, MEMBER_HIGH)


def neighbor_score(original: InputTrace, neighbors: list[InputTrace]) -> DetectorScore:
    """Mean NLL of the original minus the mean over neighbor texts."""
    if not neighbors:
        raise ScoringError(f"{original.question_id}: neighbor score requires at least one neighbor")
    mean_nll = lambda t: float(-_input_logprobs(t).mean())  # noqa: E731
    value = mean_nll(original) - math.fsum(mean_nll(n) for n in neighbors) / len(neighbors)
    return DetectorScore(original.question_id, NEIGHBOR, value, MEMBER_LOW)
