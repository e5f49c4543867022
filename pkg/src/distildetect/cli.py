"""Command-line surface: fetch, score, eval, sweep, simulate, report.

Runs are driven by a JSON config file; flags override config fields and
config fields override built-in defaults. Outputs are deterministic
(no timestamps), and every run directory gets a run_<command>.json with
the digest of the result-affecting settings plus the seed.

Exit codes: 0 success (warnings allowed), 1 usage/config error,
2 data error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

from . import detectors, evaluation
from .client import (
    DEFAULT_SYSTEM_PROMPT,
    GenerationRequest,
    InferenceClient,
    InputRequest,
    ModelEndpoint,
    RetryPolicy,
)
from .errors import (
    AuditError,
    CapabilityError,
    ConfigError,
    EvaluationError,
    ScoringError,
    TraceError,
    TransportError,
)
from .evaluation import EvalReport, evaluate, run_ablation, run_sweep, settings_digest
from .simulator import SimParams, simulate_dataset
from .traces import (
    KIND_GENERATION,
    KIND_INPUT,
    LABELS,
    VARIANT_LOWERCASED,
    VARIANT_NEIGHBOR,
    VARIANT_ORIGINAL,
    DecodeParams,
    GenerationTrace,
    InputTrace,
    load_trace_file,
    save_trace_file,
    score_from_obj,
    score_to_obj,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "endpoint": {
        "base_url": "http://localhost:8000",
        "model_id": "",
        "api_key": None,
        "timeout": 60.0,
        "max_parallel": 4,
        "retry": {"max_attempts": 3, "backoff_base": 0.5},
    },
    "decode": {"max_tokens": 1024, "system_prompt": None},
    "cache_dir": None,
    "questions": None,
    "traces": {"generation": None, "input": None, "input_lowercase": None, "neighbors": None},
    "detectors": {
        "enabled": ["token_deviation", "generated_perplexity", "generated_min_k", "near_deterministic"],
        "deviation": {"tau": 1.0, "alpha": 0.6, "m": 300},
        "min_k": {"k_percent": 20.0, "limit": 1000},
        "near_deterministic": {"threshold": 0.99, "limit": 300},
        "generated_perplexity": {"limit": 1000},
        "mean_probability": {"limit": 1000},
    },
    "eval": {"fpr_budgets": [0.01], "split_ratio": 0.8, "seed": 0},
    "simulate": {"n_members": 200, "n_nonmembers": 200, "master_seed": 42, "params": {}},
    "output_dir": "audit-run",
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = json.loads(p.read_text("utf-8"))
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(loaded) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return _deep_merge(cfg, loaded)


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} configured")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_meta(out_dir: Path, command: str, settings: dict, seed) -> str:
    digest = settings_digest({"command": command, "settings": settings})
    obj = {"command": command, "seed": seed, "settings": settings, "settings_digest": digest}
    (out_dir / f"run_{command}.json").write_text(
        json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    return digest


def _load_questions(path: Path, require_text: bool = True) -> list[dict]:
    questions = []
    seen = set()
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, ValueError) as exc:
                raise TraceError(f"{path}: line {line_no}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("question_id"), str):
                raise TraceError(f"{path}: line {line_no}: question rows need a string question_id")
            qid = obj["question_id"]
            if qid in seen:
                raise TraceError(f"{path}: line {line_no}: duplicate question_id {qid!r}")
            seen.add(qid)
            text = obj.get("text")
            if require_text and not isinstance(text, str):
                raise TraceError(f"{path}: line {line_no}: question rows need a string text")
            label = obj.get("label", "unknown")
            if label not in LABELS:
                raise TraceError(f"{path}: line {line_no}: label must be one of {LABELS}")
            questions.append({"question_id": qid, "text": text, "label": label})
    return questions


# ---------------------------------------------------------------- fetch


def _endpoint_from_cfg(cfg: dict) -> ModelEndpoint:
    e = cfg["endpoint"]
    try:
        return ModelEndpoint(
            base_url=e["base_url"],
            model_id=e["model_id"],
            api_key=e.get("api_key"),
            timeout=float(e["timeout"]),
            max_parallel=int(e["max_parallel"]),
            retry=RetryPolicy(int(e["retry"]["max_attempts"]), float(e["retry"]["backoff_base"])),
        )
    except (KeyError, TypeError, ValueError, TransportError) as exc:
        raise ConfigError(f"bad endpoint config: {exc}") from exc


def _decode_from_cfg(cfg: dict) -> DecodeParams:
    d = cfg["decode"]
    prompt = d.get("system_prompt")
    if prompt is None:
        prompt = DEFAULT_SYSTEM_PROMPT
    try:
        return DecodeParams(strategy="greedy", max_tokens=int(d["max_tokens"]), system_prompt=prompt)
    except (KeyError, TypeError, ValueError, TraceError) as exc:
        raise ConfigError(f"bad decode config: {exc}") from exc


def _log_progress(done: int, total: int) -> None:
    if done == total or done % 25 == 0:
        logger.info("fetched %d/%d", done, total)


def cmd_fetch(
    cfg: dict,
    *,
    include_inputs: bool = False,
    include_lowercase: bool = False,
    client_factory=None,
) -> int:
    questions_path = _require_file(cfg["questions"], "questions file")
    questions = _load_questions(questions_path)
    endpoint = _endpoint_from_cfg(cfg)
    decode = _decode_from_cfg(cfg)
    out = _out_dir(cfg)
    factory = client_factory or (lambda ep, cache_dir: InferenceClient(ep, cache_dir))
    client = factory(endpoint, cfg["cache_dir"])

    batches = [
        (
            "generation",
            out / "generation.jsonl",
            [GenerationRequest(q["question_id"], q["text"], decode, q["label"]) for q in questions],
        )
    ]
    if include_inputs:
        batches.append(
            (
                "input",
                out / "input.jsonl",
                [InputRequest(q["question_id"], q["text"], VARIANT_ORIGINAL) for q in questions],
            )
        )
    if include_lowercase:
        batches.append(
            (
                "input_lowercase",
                out / "input_lowercase.jsonl",
                [InputRequest(q["question_id"], q["text"], VARIANT_LOWERCASED) for q in questions],
            )
        )

    all_failures = []
    n_traces = 0
    for kind, path, reqs in batches:
        result = client.run_batch(reqs, progress=_log_progress)
        traces = [t for t in result.results if t is not None]
        save_trace_file(traces, path)
        n_traces += len(traces)
        for f in result.failures:
            all_failures.append({"question_id": f.question_id, "kind": kind, "error": f.error})
            logger.warning("fetch failed for %s (%s): %s", f.question_id, kind, f.error)

    if all_failures:
        with open(out / "failures.jsonl", "w", encoding="utf-8") as fh:
            for row in all_failures:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    _write_run_meta(
        out,
        "fetch",
        {
            "model_id": endpoint.model_id,
            "decode": {"max_tokens": decode.max_tokens, "system_prompt": decode.system_prompt},
            "n_questions": len(questions),
            "include_inputs": include_inputs,
            "include_lowercase": include_lowercase,
        },
        seed=None,
    )
    if questions and n_traces == 0 and all_failures:
        logger.error("all %d fetches failed", len(all_failures))
        return 3
    if all_failures:
        logger.warning("%d fetches failed; see %s", len(all_failures), out / "failures.jsonl")
    return 0


# ---------------------------------------------------------------- score


def _detector_params(cfg: dict) -> dict:
    det = cfg["detectors"]
    try:
        dev = detectors.DeviationParams(**det["deviation"])
        mink = detectors.MinKParams(**det["min_k"])
    except (TypeError, ScoringError) as exc:
        raise ConfigError(f"bad detector params: {exc}") from exc
    near = det["near_deterministic"]
    return {
        detectors.TOKEN_DEVIATION: lambda t: detectors.deviation_score(t, dev),
        detectors.GENERATED_PERPLEXITY: lambda t: detectors.generated_perplexity(
            t, det["generated_perplexity"]["limit"]
        ),
        detectors.GENERATED_MIN_K: lambda t: detectors.generated_min_k(t, mink),
        detectors.MEAN_PROBABILITY: lambda t: detectors.mean_probability(t, det["mean_probability"]["limit"]),
        detectors.NEAR_DETERMINISTIC: lambda t: detectors.near_deterministic_score(
            t, near["threshold"], near["limit"]
        ),
        detectors.INPUT_PERPLEXITY: detectors.input_perplexity,
        detectors.ZLIB: detectors.zlib_score,
        detectors.MIN_K: lambda t: detectors.min_k_score(t, mink),
        detectors.MIN_K_PP: lambda t: detectors.min_k_pp_score(t, mink),
    }


def _load_all_traces(cfg: dict):
    paths = cfg["traces"]
    records = []
    seen_paths = set()
    for key in ("generation", "input", "input_lowercase", "neighbors"):
        path = paths.get(key)
        if path is None or path in seen_paths:
            continue
        seen_paths.add(path)
        records.extend(load_trace_file(_require_file(path, f"{key} trace file")))
    gens = [r for r in records if isinstance(r, GenerationTrace)]
    originals, lowered, neighbors = {}, {}, {}
    for r in records:
        if not isinstance(r, InputTrace):
            continue
        if r.variant == VARIANT_ORIGINAL:
            originals[r.question_id] = r
        elif r.variant == VARIANT_LOWERCASED:
            lowered[r.question_id] = r
        elif r.variant == VARIANT_NEIGHBOR:
            neighbors.setdefault(r.question_id, []).append(r)
    return gens, originals, lowered, neighbors


def cmd_score(cfg: dict, out_path=None) -> int:
    det_cfg = cfg["detectors"]
    enabled = list(det_cfg["enabled"])
    unknown = [d for d in enabled if d not in detectors.ORIENTATION]
    if unknown:
        raise ConfigError(f"unknown detectors: {unknown}")
    scorers = _detector_params(cfg)
    gens, originals, lowered, neighbors = _load_all_traces(cfg)

    needs_gen = [d for d in enabled if d in detectors.GENERATION_DETECTORS]
    if needs_gen and not gens:
        raise ConfigError(f"detectors {needs_gen} need generation traces; none configured")
    needs_input = [d for d in enabled if d in detectors.INPUT_DETECTORS or d in detectors.PAIRED_DETECTORS]
    if needs_input and not originals:
        raise ConfigError(f"detectors {needs_input} need input traces; none configured")

    rows = []
    skips = []

    def attempt(detector: str, question_id: str, thunk) -> None:
        try:
            rows.append(thunk())
        except ScoringError as exc:
            skips.append({"question_id": question_id, "detector": detector, "reason": str(exc)})
            logger.warning("skipped %s for %s: %s", detector, question_id, exc)

    for det in enabled:
        if det in detectors.GENERATION_DETECTORS:
            for tr in gens:
                attempt(det, tr.question_id, lambda tr=tr: scorers[det](tr))
        elif det in detectors.INPUT_DETECTORS:
            for tr in originals.values():
                attempt(det, tr.question_id, lambda tr=tr: scorers[det](tr))
        elif det == detectors.LOWERCASE:
            for qid, tr in originals.items():
                if qid not in lowered:
                    skips.append({"question_id": qid, "detector": det, "reason": "no lowercased trace"})
                    logger.warning("skipped %s for %s: no lowercased trace", det, qid)
                    continue
                attempt(det, qid, lambda tr=tr, qid=qid: detectors.lowercase_score(tr, lowered[qid]))
        elif det == detectors.NEIGHBOR:
            for qid, tr in originals.items():
                attempt(det, qid, lambda tr=tr, qid=qid: detectors.neighbor_score(tr, neighbors.get(qid, [])))

    out = _out_dir(cfg)
    path = Path(out_path) if out_path else out / "scores.jsonl"
    seed = cfg["eval"]["seed"]
    digest = settings_digest({"command": "score", "detectors": det_cfg, "seed": seed})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "run_meta", "settings_digest": digest, "seed": seed}) + "\n")
        for row in rows:
            fh.write(json.dumps(score_to_obj(row), ensure_ascii=False) + "\n")
    if skips:
        with open(out / "skips.jsonl", "w", encoding="utf-8") as fh:
            for row in skips:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    _write_run_meta(out, "score", {"detectors": det_cfg, "n_scores": len(rows), "n_skips": len(skips)}, seed)
    logger.info("wrote %d scores (%d skips) to %s", len(rows), len(skips), path)
    return 0


# ---------------------------------------------------------------- eval


def _read_scores(path: Path):
    rows = []
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, ValueError) as exc:
                raise TraceError(f"{path}: line {line_no}: invalid JSON ({exc})") from exc
            if isinstance(obj, dict) and obj.get("kind") == "run_meta":
                continue
            rows.append(score_from_obj(obj))
    return rows


def _load_labels(path: Path) -> dict[str, str]:
    """Labels from either a question list or a generation trace file."""
    with open(path, "rb") as fh:
        head = b""
        for line in fh:
            if line.strip():
                head = line
                break
    try:
        head_obj = json.loads(head.decode("utf-8")) if head.strip() else {}
    except (UnicodeDecodeError, ValueError):
        head_obj = {}
    if isinstance(head_obj, dict) and head_obj.get("kind") in (KIND_GENERATION, KIND_INPUT):
        return {
            r.question_id: r.label for r in load_trace_file(path) if isinstance(r, GenerationTrace)
        }
    return {q["question_id"]: q["label"] for q in _load_questions(path, require_text=False)}


def cmd_eval(cfg: dict, scores_path=None, labels_path=None) -> int:
    out = _out_dir(cfg)
    scores_file = _require_file(scores_path or str(out / "scores.jsonl"), "scores file")
    labels_file = _require_file(labels_path or cfg["questions"] or cfg["traces"]["generation"], "labels file")
    rows = _read_scores(scores_file)
    if not rows:
        raise EvaluationError(f"no scores in {scores_file}")
    labels = _load_labels(labels_file)

    bad = sorted({r.question_id for r in rows if labels.get(r.question_id, "unknown") == "unknown"})
    if bad:
        shown = ", ".join(bad[:10]) + ("..." if len(bad) > 10 else "")
        raise EvaluationError(f"missing labels for question_ids: {shown}")

    groups: dict[str, dict] = {}
    for r in rows:
        g = groups.setdefault(r.detector, {"member": [], "nonmember": [], "orientation": r.orientation})
        if g["orientation"] != r.orientation:
            raise EvaluationError(f"detector {r.detector} has mixed orientations in {scores_file}")
        g[labels[r.question_id]].append(r.score)

    budgets = [float(b) for b in cfg["eval"]["fpr_budgets"]]
    seed = cfg["eval"]["seed"]
    det_cfg = cfg["detectors"]
    param_sources = {
        detectors.TOKEN_DEVIATION: det_cfg["deviation"],
        detectors.GENERATED_MIN_K: det_cfg["min_k"],
        detectors.MIN_K: det_cfg["min_k"],
        detectors.MIN_K_PP: det_cfg["min_k"],
        detectors.NEAR_DETERMINISTIC: det_cfg["near_deterministic"],
        detectors.GENERATED_PERPLEXITY: det_cfg["generated_perplexity"],
        detectors.MEAN_PROBABILITY: det_cfg["mean_probability"],
    }
    reports = []
    for det in sorted(groups):
        g = groups[det]
        if not g["member"] or not g["nonmember"]:
            raise EvaluationError(
                f"detector {det}: need scores from both classes "
                f"(members={len(g['member'])}, nonmembers={len(g['nonmember'])})"
            )
        report = evaluate(
            det,
            g["member"],
            g["nonmember"],
            g["orientation"],
            params=param_sources.get(det, {}),
            fpr_budgets=budgets,
            seed=seed,
        )
        reports.append(report)
        (out / f"report_{det}.json").write_text(report.to_json(), "utf-8")
        (out / f"hist_{det}.csv").write_text(evaluation.histogram_to_csv(report), "utf-8")
    (out / "reports.csv").write_text(evaluation.reports_to_csv(reports), "utf-8")
    _write_run_meta(out, "eval", {"fpr_budgets": budgets, "detectors": sorted(groups)}, seed)
    logger.info("wrote %d reports to %s", len(reports), out)
    return 0


# ---------------------------------------------------------------- sweep


def _parse_values(spec: str) -> list:
    def num(s: str):
        try:
            return int(s)
        except ValueError:
            try:
                return float(s)
            except ValueError:
                raise ConfigError(f"bad grid value {s!r}") from None

    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range grids are start:stop:step, got {spec!r}")
        start, stop, step = (num(p) for p in parts)
        if not all(isinstance(v, int) for v in (start, stop, step)) or step <= 0:
            raise ConfigError(f"range grids need positive integer parts, got {spec!r}")
        return list(range(start, stop + 1, step))
    return [num(p) for p in spec.split(",") if p]


def cmd_sweep(
    cfg: dict,
    traces_path=None,
    detector: str = detectors.TOKEN_DEVIATION,
    param: str = "m",
    values_spec: str | None = None,
    preset: str | None = None,
) -> int:
    out = _out_dir(cfg)
    path = _require_file(traces_path or cfg["traces"]["generation"], "generation trace file")
    traces = [r for r in load_trace_file(path) if isinstance(r, GenerationTrace)]
    budgets = [float(b) for b in cfg["eval"]["fpr_budgets"]]
    seed = cfg["eval"]["seed"]
    if preset is not None:
        if preset != "ablation":
            raise ConfigError(f"unknown sweep preset {preset!r}")
        points = run_ablation(traces, fpr_budgets=budgets, seed=seed)
    else:
        values = _parse_values(values_spec) if values_spec else None
        points = run_sweep(traces, detector, param, values, fpr_budgets=budgets, seed=seed)
    (out / "sweep.csv").write_text(evaluation.sweep_to_csv(points), "utf-8")
    for p in points:
        if p.report is None:
            logger.warning("sweep point %s=%s failed: %s", p.param, p.value, p.error)
            continue
        value_str = f"{p.value:g}" if isinstance(p.value, float) else str(p.value)
        (out / f"report_{p.param}_{value_str}.json").write_text(p.report.to_json(), "utf-8")
    _write_run_meta(
        out,
        "sweep",
        {
            "detector": detector if preset is None else "ablation",
            "param": param if preset is None else "config",
            "values": [str(p.value) for p in points],
            "fpr_budgets": budgets,
        },
        seed,
    )
    failed = sum(1 for p in points if p.report is None)
    if failed:
        logger.warning("%d of %d sweep points failed", failed, len(points))
        if failed == len(points):
            raise EvaluationError("every sweep point failed; see sweep.csv")
    logger.info("wrote %d sweep points to %s", len(points), out)
    return 0


# ---------------------------------------------------------------- simulate / report


def _sim_params_from_cfg(cfg: dict) -> SimParams:
    params = dict(cfg["simulate"].get("params") or {})
    if "low_prob_beta" in params:
        params["low_prob_beta"] = tuple(params["low_prob_beta"])
    try:
        return SimParams(**params)
    except TypeError as exc:
        raise ConfigError(f"bad simulator params: {exc}") from exc


def cmd_simulate(cfg: dict, out_path=None) -> int:
    sim = cfg["simulate"]
    params = _sim_params_from_cfg(cfg)
    try:
        dataset = simulate_dataset(int(sim["n_members"]), int(sim["n_nonmembers"]), params, int(sim["master_seed"]))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulate config: {exc}") from exc
    out = _out_dir(cfg)
    path = Path(out_path) if out_path else out / "simulated.jsonl"
    save_trace_file(dataset, path)
    _write_run_meta(
        out,
        "simulate",
        {
            "n_members": sim["n_members"],
            "n_nonmembers": sim["n_nonmembers"],
            "params": params.to_obj(),
        },
        sim["master_seed"],
    )
    logger.info("wrote %d traces to %s", len(dataset), path)
    return 0


def cmd_report(run_dir) -> int:
    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError(f"not a directory: {run_dir}")
    report_paths = sorted(run.glob("report_*.json"))
    reports = []
    for p in report_paths:
        try:
            reports.append(EvalReport.from_obj(json.loads(p.read_text("utf-8"))))
        except (ValueError, KeyError) as exc:
            raise TraceError(f"unreadable report {p}: {exc}") from exc
    if not reports:
        raise EvaluationError(f"no report_*.json files in {run_dir}")
    budgets = sorted({b for r in reports for b in r.tpr_at})
    header = ["detector", "auc"] + [f"tpr@{b:g}" for b in budgets] + ["n_mem", "n_non"]
    rows = [
        [r.detector, f"{r.auc:.4f}"]
        + [f"{r.tpr_at[b]:.4f}" if b in r.tpr_at else "-" for b in budgets]
        + [str(r.n_members), str(r.n_nonmembers)]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    lines.append("")
    for r in reports:
        seed = "-" if r.seed is None else r.seed
        lines.append(f"# {r.detector}: seed={seed} settings_digest={r.digest}")
    text = "\n".join(lines) + "\n"
    (run / "summary.txt").write_text(text, "utf-8")
    (run / "summary.csv").write_text(evaluation.reports_to_csv(reports), "utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- wiring


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 for usage problems, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distildetect", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out-dir", help="output directory (overrides config output_dir)")
        p.add_argument("--seed", type=int, help="override eval seed / simulator master seed")

    p = sub.add_parser("fetch", help="harvest traces from an OpenAI-compatible endpoint")
    common(p)
    p.add_argument("--questions", help="question list JSONL (question_id, text, label)")
    p.add_argument("--inputs", action="store_true", help="also fetch input-token logprobs")
    p.add_argument("--lowercase", action="store_true", help="also fetch lowercased-input logprobs")

    p = sub.add_parser("score", help="run detectors over trace files")
    common(p)
    p.add_argument("--generation", help="generation trace file")
    p.add_argument("--input", dest="input_", help="input trace file")
    p.add_argument("--input-lowercase", help="lowercased input trace file")
    p.add_argument("--neighbors", help="neighbor input trace file")
    p.add_argument("--detectors", help="comma-separated detector names")
    p.add_argument("--out", help="scores output path")

    p = sub.add_parser("eval", help="turn labeled scores into metric reports")
    common(p)
    p.add_argument("--scores", help="scores JSONL from the score command")
    p.add_argument("--labels", help="question list or generation trace file with labels")
    p.add_argument("--budgets", help="comma-separated FPR budgets")

    p = sub.add_parser("sweep", help="evaluate a detector over a hyperparameter grid")
    common(p)
    p.add_argument("--traces", help="labeled generation trace file")
    p.add_argument("--detector", default=detectors.TOKEN_DEVIATION)
    p.add_argument("--param", default="m", choices=["m", "alpha", "tau", "k"])
    p.add_argument("--values", help="grid: start:stop:step or v1,v2,...")
    p.add_argument("--preset", choices=["ablation"], help="run a named preset instead of a grid")

    p = sub.add_parser("simulate", help="generate a synthetic labeled trace file")
    common(p)
    p.add_argument("--members", type=int, help="member trace count")
    p.add_argument("--nonmembers", type=int, help="non-member trace count")
    p.add_argument("--tokens", type=int, help="tokens per trace")
    p.add_argument("--out", help="trace output path")

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    return parser


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "out_dir", None):
        cfg["output_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        cfg["eval"]["seed"] = args.seed
        cfg["simulate"]["master_seed"] = args.seed
    if getattr(args, "questions", None):
        cfg["questions"] = args.questions
    if getattr(args, "generation", None):
        cfg["traces"]["generation"] = args.generation
    if getattr(args, "input_", None):
        cfg["traces"]["input"] = args.input_
    if getattr(args, "input_lowercase", None):
        cfg["traces"]["input_lowercase"] = args.input_lowercase
    if getattr(args, "neighbors", None):
        cfg["traces"]["neighbors"] = args.neighbors
    if getattr(args, "detectors", None):
        cfg["detectors"]["enabled"] = [d for d in args.detectors.split(",") if d]
    if getattr(args, "budgets", None):
        try:
            cfg["eval"]["fpr_budgets"] = [float(b) for b in args.budgets.split(",") if b]
        except ValueError as exc:
            raise ConfigError(f"bad --budgets: {exc}") from exc
    if getattr(args, "members", None) is not None:
        cfg["simulate"]["n_members"] = args.members
    if getattr(args, "nonmembers", None) is not None:
        cfg["simulate"]["n_nonmembers"] = args.nonmembers
    if getattr(args, "tokens", None) is not None:
        cfg["simulate"].setdefault("params", {})["n_tokens"] = args.tokens
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "fetch":
            return cmd_fetch(cfg, include_inputs=args.inputs, include_lowercase=args.lowercase)
        if args.command == "score":
            return cmd_score(cfg, out_path=args.out)
        if args.command == "eval":
            return cmd_eval(cfg, scores_path=args.scores, labels_path=args.labels)
        if args.command == "sweep":
            return cmd_sweep(
                cfg,
                traces_path=args.traces,
                detector=args.detector,
                param=args.param,
                values_spec=args.values,
                preset=args.preset,
            )
        if args.command == "simulate":
            return cmd_simulate(cfg, out_path=args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        logger.error("%s", exc)
        return 1
    except (TraceError, ScoringError, EvaluationError) as exc:
        logger.error("%s", exc)
        return 2
    except (TransportError, CapabilityError) as exc:
        logger.error("%s", exc)
        return 3
    except AuditError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
