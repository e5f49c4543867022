"""Independent reference implementations for cross-checking detector math.

Deliberately naive: plain Python loops over lists, math and zlib only.
Nothing here imports the package under test or numpy, so agreement is
evidence rather than tautology. All functions take raw logprob lists
(None marks the unscored first input slot) and raise ValueError where
the package raises a ScoringError subclass.
"""

import math
import zlib
from fractions import Fraction


def deviation(logprobs, tau=1.0, alpha=0.6, m=300):
    window = list(logprobs)[:m]
    if not window:
        raise ValueError("empty generation")
    devs = []
    for lp in window:
        p = math.exp(lp)
        if p < tau:
            devs.append((tau - p) ** alpha)
    if not devs:
        return 0.0
    return sum(devs) / len(devs)


def outlier_mean_probability(logprobs, tau=1.0, m=300):
    window = list(logprobs)[:m]
    if not window:
        raise ValueError("empty generation")
    probs = [math.exp(lp) for lp in window if math.exp(lp) < tau]
    if not probs:
        return None
    return sum(probs) / len(probs)


def perplexity(logprobs, limit=1000):
    window = list(logprobs)[:limit]
    if not window:
        raise ValueError("empty generation")
    return math.exp(-(sum(window) / len(window)))


def min_k(logprobs, k_percent=20.0, limit=None):
    window = list(logprobs) if limit is None else list(logprobs)[:limit]
    if not window:
        raise ValueError("no tokens")
    n_k = max(1, math.floor(k_percent * len(window) / 100.0))
    lowest = sorted(window)[:n_k]
    return sum(lowest) / len(lowest)


def mean_probability(logprobs, limit=1000):
    window = list(logprobs)[:limit]
    if not window:
        raise ValueError("empty generation")
    probs = [math.exp(lp) for lp in window]
    return sum(probs) / len(probs)


def near_deterministic(logprobs, threshold=0.99, limit=300):
    window = list(logprobs)[:limit]
    if not window:
        raise ValueError("empty generation")
    hits = sum(1 for lp in window if math.exp(lp) >= threshold)
    return hits / len(window)


def _scored(logprobs):
    vals = [lp for lp in logprobs if lp is not None]
    if not vals:
        raise ValueError("no scored tokens")
    return vals


def input_perplexity(logprobs):
    vals = _scored(logprobs)
    return math.exp(-(sum(vals) / len(vals)))


def zlib_ratio(text, logprobs):
    if not text:
        raise ValueError("empty text")
    nll = sum(-lp for lp in logprobs if lp is not None)
    return nll / len(zlib.compress(text.encode("utf-8"), 6))


def lowercase_ratio(original_logprobs, lowered_logprobs):
    return input_perplexity(original_logprobs) / input_perplexity(lowered_logprobs)


def min_k_pp(logprobs, stats, k_percent=20.0):
    """stats aligns 1:1 with logprobs as (mu, sigma) pairs; null slots skipped."""
    zs = []
    for lp, (mu, sigma) in zip(logprobs, stats):
        if lp is None:
            continue
        zs.append((lp - mu) / max(sigma, 1e-6))
    if not zs:
        raise ValueError("no scored tokens")
    n_k = max(1, math.floor(k_percent * len(zs) / 100.0))
    lowest = sorted(zs)[:n_k]
    return sum(lowest) / len(lowest)


def neighbor_delta(original_logprobs, neighbor_logprob_lists):
    if not neighbor_logprob_lists:
        raise ValueError("no neighbors")

    def mean_nll(lps):
        vals = _scored(lps)
        return -(sum(vals) / len(vals))

    neighbor_mean = sum(mean_nll(lps) for lps in neighbor_logprob_lists) / len(neighbor_logprob_lists)
    return mean_nll(original_logprobs) - neighbor_mean


def pairwise_auc(member_scores, nonmember_scores, orientation):
    """O(N*M) pair count in exact integer half-credits, one final division."""
    wins2 = 0
    for m in member_scores:
        for n in nonmember_scores:
            if m == n:
                wins2 += 1
            elif (m > n) if orientation == "member_high" else (m < n):
                wins2 += 2
    return wins2 / (2 * len(member_scores) * len(nonmember_scores))


def pairwise_auc_exact(member_scores, nonmember_scores, orientation) -> Fraction:
    wins2 = 0
    for m in member_scores:
        for n in nonmember_scores:
            if m == n:
                wins2 += 1
            elif (m > n) if orientation == "member_high" else (m < n):
                wins2 += 2
    return Fraction(wins2, 2 * len(member_scores) * len(nonmember_scores))


def exhaustive_tpr_at_fpr(member_scores, nonmember_scores, orientation, budget):
    """Try the member-side count at and strictly past every score value.

    With a strict decision rule every achievable operating point is hit by
    some threshold at a score or just beyond it, plus the reject-all point.
    """

    def rates(counter):
        fpr = sum(1 for s in nonmember_scores if counter(s)) / len(nonmember_scores)
        tpr = sum(1 for s in member_scores if counter(s)) / len(member_scores)
        return fpr, tpr

    candidates = [(0.0, 0.0)]
    for v in set(member_scores) | set(nonmember_scores):
        if orientation == "member_low":
            candidates.append(rates(lambda s, v=v: s < v))
            candidates.append(rates(lambda s, v=v: s <= v))
        else:
            candidates.append(rates(lambda s, v=v: s > v))
            candidates.append(rates(lambda s, v=v: s >= v))
    return max(tpr for fpr, tpr in candidates if fpr <= budget)
