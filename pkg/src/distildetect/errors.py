"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: config/usage problems exit 1, data
problems exit 2, endpoint problems exit 3.
"""


class AuditError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(AuditError):
    """Bad configuration or command usage."""


class TraceError(AuditError, ValueError):
    """Base class for trace file problems."""


class TraceParseError(TraceError):
    """A line could not be decoded as a trace record."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message)
        self.line_no = line_no


class TraceValidationError(TraceError):
    """A record decoded but violates a model invariant."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message)
        self.line_no = line_no


class ScoringError(AuditError, ValueError):
    """A detector could not score the given trace."""


class EmptyGenerationError(ScoringError):
    """Generation trace has no tokens; distinct from a legal zero score."""


class NoScoredTokensError(ScoringError):
    """Input trace has no non-null logprob slots."""


class UnsupportedDetectorError(ScoringError):
    """Trace lacks data the detector requires (e.g. vocab_stats)."""


class MismatchedPairError(ScoringError):
    """Paired traces do not belong together."""


class EvaluationError(AuditError, ValueError):
    """Invalid inputs to an evaluation routine."""


class TransportError(AuditError):
    """Network or HTTP failure after retries."""


class CapabilityError(AuditError):
    """Endpoint cannot supply what the audit needs (logprobs, echo)."""
