"""Synthetic generation traces with member/non-member token statistics.

Each token is independently either near-deterministic (probability
1 - Exp(scale), so most mass sits just under 1) or drawn from a Beta
bulk. Members saturate more often than non-members, and non-members
additionally lose saturation mass early in the sequence (the drift
term), which decays linearly to zero by token 300 — so window sweeps
have an interior peak to find. Everything is deterministic given
(label, params, seed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .traces import LABEL_MEMBER, LABEL_NONMEMBER, DecodeParams, GenerationTrace, TokenProb

DRIFT_HORIZON = 300
SIM_MODEL_ID = "synthetic-sim"
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SimParams:
    n_tokens: int = 400
    member_sat: float = 0.85
    nonmember_sat: float = 0.55
    sat_epsilon_scale: float = 0.002
    low_prob_beta: tuple[float, float] = (2.0, 2.0)
    drift: float = 0.15

    def __post_init__(self):
        if isinstance(self.n_tokens, bool) or not isinstance(self.n_tokens, int) or self.n_tokens < 1:
            raise ConfigError(f"n_tokens must be a positive integer, got {self.n_tokens!r}")
        for name in ("member_sat", "nonmember_sat"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= float(v) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v!r}")
        if not isinstance(self.sat_epsilon_scale, (int, float)) or float(self.sat_epsilon_scale) <= 0.0:
            raise ConfigError(f"sat_epsilon_scale must be > 0, got {self.sat_epsilon_scale!r}")
        a, b = self.low_prob_beta
        if not (float(a) > 0.0 and float(b) > 0.0):
            raise ConfigError(f"low_prob_beta shapes must be > 0, got {self.low_prob_beta!r}")
        if not isinstance(self.drift, (int, float)) or float(self.drift) < 0.0:
            raise ConfigError(f"drift must be >= 0, got {self.drift!r}")

    def to_obj(self) -> dict:
        return {
            "n_tokens": self.n_tokens,
            "member_sat": self.member_sat,
            "nonmember_sat": self.nonmember_sat,
            "sat_epsilon_scale": self.sat_epsilon_scale,
            "low_prob_beta": list(self.low_prob_beta),
            "drift": self.drift,
        }


def derive_seed(master_seed: int, counter: int) -> int:
    """Stable per-trace seed; hashing avoids collisions between nearby masters."""
    digest = hashlib.sha256(f"{master_seed}:{counter}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def simulate_trace(
    label: str,
    params: SimParams | None = None,
    seed: int = 0,
    question_id: str | None = None,
) -> GenerationTrace:
    if label not in (LABEL_MEMBER, LABEL_NONMEMBER):
        raise ConfigError(f"label must be member or nonmember, got {label!r}")
    p = params or SimParams()
    rng = np.random.default_rng(seed)
    n = p.n_tokens
    base = p.member_sat if label == LABEL_MEMBER else p.nonmember_sat
    sat_rate = np.full(n, base, dtype=np.float64)
    if label == LABEL_NONMEMBER and p.drift > 0.0:
        positions = np.arange(n, dtype=np.float64)
        sat_rate -= p.drift * np.maximum(0.0, 1.0 - positions / DRIFT_HORIZON)
        sat_rate = np.clip(sat_rate, 0.0, 1.0)
    # draw all streams unconditionally so the consumed count is fixed
    saturated = rng.random(n) < sat_rate
    near_one = 1.0 - rng.exponential(p.sat_epsilon_scale, n)
    bulk = rng.beta(p.low_prob_beta[0], p.low_prob_beta[1], n)
    probs = np.clip(np.where(saturated, near_one, bulk), PROB_FLOOR, 1.0)
    logprobs = np.log(probs)
    qid = question_id if question_id is not None else f"sim-{label}-{seed}"
    return GenerationTrace(
        question_id=qid,
        question_text=f"synthetic question {qid}",
        label=label,
        generated=tuple(TokenProb(f"t{i}", float(lp)) for i, lp in enumerate(logprobs)),
        model_id=SIM_MODEL_ID,
        decode=DecodeParams(strategy="greedy", max_tokens=n, system_prompt=""),
    )


def simulate_dataset(
    n_members: int,
    n_nonmembers: int,
    params: SimParams | None = None,
    master_seed: int = 0,
) -> list[GenerationTrace]:
    """Members first, then non-members; per-trace seeds derived by counter."""
    if n_members < 1 or n_nonmembers < 1:
        raise ConfigError("need at least one trace per class")
    p = params or SimParams()
    traces = []
    counter = 0
    for label, count, tag in ((LABEL_MEMBER, n_members, "m"), (LABEL_NONMEMBER, n_nonmembers, "n")):
        for i in range(count):
            traces.append(
                simulate_trace(label, p, derive_seed(master_seed, counter), question_id=f"sim-{tag}-{i:05d}")
            )
            counter += 1
    return traces
