"""Metrics over labeled detector scores: AUC, ROC, TPR at an FPR budget,
balanced splits, histograms, hyperparameter sweeps, and report serialization.

The decision rule is a strict threshold: under member_low a question is
predicted member when score < lambda (flipped for member_high). ROC
thresholds are taken at every observed score plus -inf/+inf sentinels,
which is sufficient for exact empirical curves. Ties get Mann-Whitney
half-credit in AUC, and the rank-based computation is arranged so it
equals the O(N^2) pairwise count bit for bit: average ranks are exact
half-integers and the orientation-appropriate pair count is formed
before the single final division.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import detectors
from .errors import EvaluationError, ScoringError
from .traces import (
    LABEL_MEMBER,
    LABEL_NONMEMBER,
    MEMBER_HIGH,
    MEMBER_LOW,
    ORIENTATIONS,
    DetectorScore,
    GenerationTrace,
)

DEFAULT_FPR_BUDGETS = (0.01,)
HISTOGRAM_BINS = 50

DEFAULT_GRIDS = {
    "m": list(range(50, 1001, 50)),
    "alpha": [i / 10 for i in range(1, 16)],
    "tau": [i / 10 for i in range(1, 11)],
    "k": [5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0],
}


def _check_orientation(orientation: str) -> None:
    if orientation not in ORIENTATIONS:
        raise EvaluationError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")


def _as_scores(values, side: str) -> np.ndarray:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise EvaluationError(f"no {side} scores")
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"non-finite {side} score")
    return arr


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties averaged. Exact half-integers."""
    order = np.argsort(values, kind="mergesort")
    ordered = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < ordered.size:
        j = i
        while j + 1 < ordered.size and ordered[j + 1] == ordered[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(member_scores, nonmember_scores, orientation: str) -> float:
    """Mann-Whitney AUC with half-credit ties, O(N log N) by ranking."""
    _check_orientation(orientation)
    members = _as_scores(member_scores, "member")
    nonmembers = _as_scores(nonmember_scores, "nonmember")
    ranks = _average_ranks(np.concatenate([members, nonmembers]))
    n_m, n_n = members.size, nonmembers.size
    # rank-sum identity: this is #(m > n) pairs plus half the ties, exactly
    wins_high = float(ranks[:n_m].sum()) - n_m * (n_m + 1) / 2.0
    wins = wins_high if orientation == MEMBER_HIGH else n_m * n_n - wins_high
    return wins / (n_m * n_n)


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


def roc_curve(member_scores, nonmember_scores, orientation: str) -> list[RocPoint]:
    """Empirical ROC at every distinct score plus sentinel thresholds.

    Consecutive thresholds landing on the same (fpr, tpr) are collapsed,
    keeping the most permissive one.
    """
    _check_orientation(orientation)
    members = np.sort(_as_scores(member_scores, "member"))
    nonmembers = np.sort(_as_scores(nonmember_scores, "nonmember"))
    distinct = np.unique(np.concatenate([members, nonmembers]))
    if orientation == MEMBER_LOW:
        thresholds = [-math.inf, *distinct.tolist(), math.inf]
        member_hits = lambda t: int(np.searchsorted(members, t, side="left"))  # noqa: E731
        nonmember_hits = lambda t: int(np.searchsorted(nonmembers, t, side="left"))  # noqa: E731
    else:
        thresholds = [math.inf, *distinct.tolist()[::-1], -math.inf]
        member_hits = lambda t: members.size - int(np.searchsorted(members, t, side="right"))  # noqa: E731
        nonmember_hits = lambda t: nonmembers.size - int(np.searchsorted(nonmembers, t, side="right"))  # noqa: E731
    points: list[RocPoint] = []
    for t in thresholds:
        fpr = nonmember_hits(t) / nonmembers.size
        tpr = member_hits(t) / members.size
        if points and points[-1].fpr == fpr and points[-1].tpr == tpr:
            points[-1] = RocPoint(t, fpr, tpr)
        else:
            points.append(RocPoint(t, fpr, tpr))
    return points


def roc_area(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under an ROC polyline; equals auc() to 1e-12."""
    terms = [
        (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5
        for a, b in zip(points[:-1], points[1:])
    ]
    return math.fsum(terms)


def tpr_at_fpr(member_scores, nonmember_scores, orientation: str, budget: float) -> float:
    """Best TPR among thresholds whose empirical FPR stays within budget."""
    if isinstance(budget, bool) or not isinstance(budget, (int, float)) or not 0.0 <= float(budget) <= 1.0:
        raise EvaluationError(f"fpr budget must be in [0, 1], got {budget!r}")
    points = roc_curve(member_scores, nonmember_scores, orientation)
    return max(p.tpr for p in points if p.fpr <= budget)


def split_pools(questions: Sequence, ratio: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then partition at round(ratio * N) into member/non-member pools."""
    if not isinstance(ratio, (int, float)) or not 0.0 < float(ratio) < 1.0:
        raise EvaluationError(f"split ratio must be in (0, 1), got {ratio!r}")
    items = list(questions)
    if not items:
        raise EvaluationError("cannot split an empty question list")
    random.Random(seed).shuffle(items)
    cut = math.floor(ratio * len(items) + 0.5)
    return items[:cut], items[cut:]


def balanced_split(
    questions: Sequence, ratio: float, seed: int, eval_size: int | None = None
) -> tuple[list, list]:
    """Pools per split_pools, then equal-sized evaluation sets from each.

    eval_size defaults to the smaller pool; asking for more is an error.
    """
    member_pool, nonmember_pool = split_pools(questions, ratio, seed)
    cap = min(len(member_pool), len(nonmember_pool))
    size = cap if eval_size is None else eval_size
    if size < 1 or size > cap:
        raise EvaluationError(f"pool too small for eval size {size} (pools {len(member_pool)}/{len(nonmember_pool)})")
    return member_pool[:size], nonmember_pool[:size]


def score_histogram(member_scores, nonmember_scores, bins: int = HISTOGRAM_BINS) -> list[tuple[float, float, int, int]]:
    """(bin_lo, bin_hi, member_count, nonmember_count) over uniform joint-range bins."""
    members = _as_scores(member_scores, "member")
    nonmembers = _as_scores(nonmember_scores, "nonmember")
    lo = float(min(members.min(), nonmembers.min()))
    hi = float(max(members.max(), nonmembers.max()))
    if lo == hi:
        lo -= 0.5
        hi += 0.5
    edges = np.linspace(lo, hi, bins + 1)
    m_counts, _ = np.histogram(members, bins=edges)
    n_counts, _ = np.histogram(nonmembers, bins=edges)
    return [
        (float(edges[i]), float(edges[i + 1]), int(m_counts[i]), int(n_counts[i]))
        for i in range(bins)
    ]


def settings_digest(settings: dict) -> str:
    """SHA-256 of the canonical JSON encoding of result-affecting settings."""
    canonical = json.dumps(settings, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class EvalReport:
    detector: str
    params: dict
    orientation: str
    auc: float
    tpr_at: dict[float, float]
    roc: list[RocPoint]
    histogram: list[tuple[float, float, int, int]]
    n_members: int
    n_nonmembers: int
    digest: str
    seed: int | None = None
    notes: list[str] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "detector": self.detector,
            "params": self.params,
            "orientation": self.orientation,
            "auc": self.auc,
            "tpr_at": {repr(b): t for b, t in self.tpr_at.items()},
            "roc": [{"threshold": p.threshold, "fpr": p.fpr, "tpr": p.tpr} for p in self.roc],
            "histogram": [list(row) for row in self.histogram],
            "n_members": self.n_members,
            "n_nonmembers": self.n_nonmembers,
            "settings_digest": self.digest,
            "seed": self.seed,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def from_obj(cls, obj: dict) -> "EvalReport":
        return cls(
            detector=obj["detector"],
            params=obj["params"],
            orientation=obj["orientation"],
            auc=obj["auc"],
            tpr_at={float(b): t for b, t in obj["tpr_at"].items()},
            roc=[RocPoint(p["threshold"], p["fpr"], p["tpr"]) for p in obj["roc"]],
            histogram=[tuple(row) for row in obj["histogram"]],
            n_members=obj["n_members"],
            n_nonmembers=obj["n_nonmembers"],
            digest=obj["settings_digest"],
            seed=obj.get("seed"),
            notes=list(obj.get("notes", [])),
        )


def evaluate(
    detector: str,
    member_scores,
    nonmember_scores,
    orientation: str,
    *,
    params: dict | None = None,
    fpr_budgets: Sequence[float] = DEFAULT_FPR_BUDGETS,
    seed: int | None = None,
    bins: int = HISTOGRAM_BINS,
    notes: Sequence[str] = (),
) -> EvalReport:
    """Compute the full metric set for one detector's labeled scores."""
    members = _as_scores(member_scores, "member")
    nonmembers = _as_scores(nonmember_scores, "nonmember")
    params = dict(params or {})
    points = roc_curve(members, nonmembers, orientation)
    all_notes = list(notes)
    tprs: dict[float, float] = {}
    for budget in fpr_budgets:
        tprs[float(budget)] = tpr_at_fpr(members, nonmembers, orientation, budget)
        if nonmembers.size * float(budget) < 1.0 and budget > 0:
            all_notes.append(
                f"fpr budget {budget:g} admits no false positive at n_nonmembers={nonmembers.size}; "
                "reported TPR is the honest empirical value at FPR 0"
            )
    if detector == detectors.ZLIB:
        all_notes.append("zlib score = total NLL / compressed byte length (zlib container, DEFLATE level 6)")
    digest = settings_digest(
        {
            "detector": detector,
            "params": params,
            "orientation": orientation,
            "fpr_budgets": [float(b) for b in fpr_budgets],
            "bins": bins,
            "seed": seed,
            "n_members": int(members.size),
            "n_nonmembers": int(nonmembers.size),
        }
    )
    return EvalReport(
        detector=detector,
        params=params,
        orientation=orientation,
        auc=auc(members, nonmembers, orientation),
        tpr_at=tprs,
        roc=points,
        histogram=score_histogram(members, nonmembers, bins),
        n_members=int(members.size),
        n_nonmembers=int(nonmembers.size),
        digest=digest,
        seed=seed,
        notes=all_notes,
    )


def split_by_label(traces: Iterable[GenerationTrace]) -> tuple[list[GenerationTrace], list[GenerationTrace]]:
    members, nonmembers, unlabeled = [], [], []
    for t in traces:
        if t.label == LABEL_MEMBER:
            members.append(t)
        elif t.label == LABEL_NONMEMBER:
            nonmembers.append(t)
        else:
            unlabeled.append(t.question_id)
    if unlabeled:
        raise EvaluationError(f"unlabeled traces: {', '.join(sorted(unlabeled)[:10])}")
    return members, nonmembers


@dataclass
class SweepPoint:
    detector: str
    param: str
    value: object
    report: EvalReport | None
    error: str | None = None


def _sweep_scorer(detector: str, param: str, value) -> tuple[Callable[[GenerationTrace], DetectorScore], dict]:
    if detector == detectors.TOKEN_DEVIATION:
        if param not in ("alpha", "m", "tau"):
            raise EvaluationError(f"token_deviation sweeps over alpha/m/tau, not {param!r}")
        dev = dataclasses.replace(detectors.DeviationParams(), **{param: value})
        return (lambda t: detectors.deviation_score(t, dev)), dataclasses.asdict(dev)
    if detector == detectors.GENERATED_MIN_K:
        if param != "k":
            raise EvaluationError(f"generated_min_k sweeps over k, not {param!r}")
        mk = detectors.MinKParams(k_percent=value)
        return (lambda t: detectors.generated_min_k(t, mk)), dataclasses.asdict(mk)
    raise EvaluationError(f"no sweep support for detector {detector!r}")


def run_sweep(
    traces: Sequence[GenerationTrace],
    detector: str = detectors.TOKEN_DEVIATION,
    param: str = "m",
    values: Sequence | None = None,
    *,
    fpr_budgets: Sequence[float] = DEFAULT_FPR_BUDGETS,
    seed: int | None = None,
) -> list[SweepPoint]:
    """One EvalReport per grid value; per-point failures are recorded, not raised."""
    if values is None:
        if param not in DEFAULT_GRIDS:
            raise EvaluationError(f"no default grid for param {param!r}")
        values = DEFAULT_GRIDS[param]
    members, nonmembers = split_by_label(traces)
    points: list[SweepPoint] = []
    for value in values:
        try:
            scorer, params = _sweep_scorer(detector, param, value)
            m_scores = [scorer(t).score for t in members]
            n_scores = [scorer(t).score for t in nonmembers]
            report = evaluate(
                detector,
                m_scores,
                n_scores,
                detectors.ORIENTATION[detector],
                params=dict(params, swept_param=param),
                fpr_budgets=fpr_budgets,
                seed=seed,
            )
            points.append(SweepPoint(detector, param, value, report))
        except (EvaluationError, ScoringError) as exc:
            points.append(SweepPoint(detector, param, value, None, error=str(exc)))
    return points


#: Ablation ladder: undamped full-window mean probability, then truncation,
#: then the deviation form, then the damping exponent.
ABLATION_CONFIGS = (
    ("mean_prob_full", detectors.MEAN_PROBABILITY, {"limit": 1000}),
    ("mean_prob_m300", detectors.MEAN_PROBABILITY, {"limit": 300}),
    ("deviation_m300", detectors.TOKEN_DEVIATION, {"tau": 1.0, "alpha": 1.0, "m": 300}),
    ("deviation_m300_damped", detectors.TOKEN_DEVIATION, {"tau": 1.0, "alpha": 0.6, "m": 300}),
)


def run_ablation(
    traces: Sequence[GenerationTrace],
    *,
    fpr_budgets: Sequence[float] = DEFAULT_FPR_BUDGETS,
    seed: int | None = None,
) -> list[SweepPoint]:
    """Score the four-step ablation ladder on one labeled trace set."""
    members, nonmembers = split_by_label(traces)
    points: list[SweepPoint] = []
    for name, detector, params in ABLATION_CONFIGS:
        try:
            if detector == detectors.MEAN_PROBABILITY:
                scorer = lambda t: detectors.mean_probability(t, params["limit"])  # noqa: E731
            else:
                dev = detectors.DeviationParams(**params)
                scorer = lambda t: detectors.deviation_score(t, dev)  # noqa: E731
            report = evaluate(
                detector,
                [scorer(t).score for t in members],
                [scorer(t).score for t in nonmembers],
                detectors.ORIENTATION[detector],
                params=dict(params, config=name),
                fpr_budgets=fpr_budgets,
                seed=seed,
            )
            points.append(SweepPoint(detector, "config", name, report))
        except (EvaluationError, ScoringError) as exc:
            points.append(SweepPoint(detector, "config", name, None, error=str(exc)))
    return points


def _csv_writer(buffer):
    import csv

    return csv.writer(buffer, lineterminator="\n")


def _budget_columns(reports: Iterable[EvalReport]) -> list[float]:
    budgets: set[float] = set()
    for r in reports:
        budgets.update(r.tpr_at)
    return sorted(budgets)


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    """Flat CSV, one row per report."""
    budgets = _budget_columns(reports)
    buf = io.StringIO()
    writer = _csv_writer(buf)
    writer.writerow(
        ["detector", "params", "orientation", "auc"]
        + [f"tpr_at_{b:g}" for b in budgets]
        + ["n_members", "n_nonmembers", "seed", "settings_digest"]
    )
    for r in reports:
        writer.writerow(
            [
                r.detector,
                json.dumps(r.params, sort_keys=True),
                r.orientation,
                repr(r.auc),
            ]
            + [repr(r.tpr_at[b]) if b in r.tpr_at else "" for b in budgets]
            + [r.n_members, r.n_nonmembers, "" if r.seed is None else r.seed, r.digest]
        )
    return buf.getvalue()


def sweep_to_csv(points: Sequence[SweepPoint]) -> str:
    """Flat CSV, one row per grid point; failed points carry the error text."""
    budgets = _budget_columns(p.report for p in points if p.report is not None)
    buf = io.StringIO()
    writer = _csv_writer(buf)
    writer.writerow(
        ["detector", "param", "value", "auc"]
        + [f"tpr_at_{b:g}" for b in budgets]
        + ["n_members", "n_nonmembers", "seed", "settings_digest", "error"]
    )
    for p in points:
        if p.report is None:
            writer.writerow([p.detector, p.param, p.value, ""] + [""] * len(budgets) + ["", "", "", "", p.error])
        else:
            r = p.report
            writer.writerow(
                [p.detector, p.param, p.value, repr(r.auc)]
                + [repr(r.tpr_at[b]) if b in r.tpr_at else "" for b in budgets]
                + [r.n_members, r.n_nonmembers, "" if r.seed is None else r.seed, r.digest, ""]
            )
    return buf.getvalue()


def histogram_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    seed = "" if report.seed is None else report.seed
    buf.write(f"# detector={report.detector} settings_digest={report.digest} seed={seed}\n")
    writer = _csv_writer(buf)
    writer.writerow(["bin_lo", "bin_hi", "member_count", "nonmember_count"])
    for lo, hi, mc, nc in report.histogram:
        writer.writerow([repr(lo), repr(hi), mc, nc])
    return buf.getvalue()
