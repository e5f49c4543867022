"""Membership-signal auditing for distilled chat models.

The package turns model traces (generated-token probabilities, or input-token
logprobs under echo) into per-question detector scores, then into ROC-based
reports. A synthetic trace generator supports calibration without a live
endpoint, and a small CLI chains the steps together.
"""

from .client import (
    DEFAULT_SYSTEM_PROMPT,
    BatchResult,
    GenerationRequest,
    InferenceClient,
    InputRequest,
    ModelEndpoint,
    RetryPolicy,
    TraceCache,
)
from .detectors import (
    DeviationParams,
    MinKParams,
    deviation_score,
    generated_min_k,
    generated_perplexity,
    input_perplexity,
    lowercase_score,
    mean_probability,
    min_k_pp_score,
    min_k_score,
    near_deterministic_fraction,
    neighbor_score,
    zlib_score,
)
from .errors import (
    AuditError,
    CapabilityError,
    ConfigError,
    EmptyGenerationError,
    EvaluationError,
    MismatchedPairError,
    NoScoredTokensError,
    ScoringError,
    TraceError,
    TraceParseError,
    TraceValidationError,
    TransportError,
    UnsupportedDetectorError,
)
from .evaluation import (
    EvalReport,
    auc,
    balanced_split,
    evaluate,
    roc_curve,
    run_ablation,
    run_sweep,
    settings_digest,
    tpr_at_fpr,
)
from .simulator import SimParams, derive_seed, simulate_dataset, simulate_trace
from .traces import (
    MEMBER_HIGH,
    MEMBER_LOW,
    DecodeParams,
    DetectorScore,
    GenerationTrace,
    InputTrace,
    TokenProb,
    VocabStat,
    load_trace_file,
    parse_trace_file,
    save_trace_file,
    write_trace_file,
)

__version__ = "0.1.0"

__all__ = [
    "AuditError",
    "BatchResult",
    "CapabilityError",
    "ConfigError",
    "DEFAULT_SYSTEM_PROMPT",
    "DecodeParams",
    "DetectorScore",
    "DeviationParams",
    "EmptyGenerationError",
    "EvalReport",
    "EvaluationError",
    "GenerationRequest",
    "GenerationTrace",
    "InferenceClient",
    "InputRequest",
    "InputTrace",
    "MEMBER_HIGH",
    "MEMBER_LOW",
    "MinKParams",
    "MismatchedPairError",
    "ModelEndpoint",
    "NoScoredTokensError",
    "RetryPolicy",
    "ScoringError",
    "SimParams",
    "TokenProb",
    "TraceCache",
    "TraceError",
    "TraceParseError",
    "TraceValidationError",
    "TransportError",
    "UnsupportedDetectorError",
    "VocabStat",
    "auc",
    "balanced_split",
    "derive_seed",
    "deviation_score",
    "evaluate",
    "generated_min_k",
    "generated_perplexity",
    "input_perplexity",
    "load_trace_file",
    "lowercase_score",
    "mean_probability",
    "min_k_pp_score",
    "min_k_score",
    "near_deterministic_fraction",
    "neighbor_score",
    "parse_trace_file",
    "roc_curve",
    "run_ablation",
    "run_sweep",
    "save_trace_file",
    "settings_digest",
    "simulate_dataset",
    "simulate_trace",
    "tpr_at_fpr",
    "write_trace_file",
    "zlib_score",
]
