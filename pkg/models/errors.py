"""Exception hierarchy shared by every package.

The CLI maps each family to an exit code (see ``main.EXIT_CODES``).
"""


class RehabLabError(Exception):
    """Base class for all errors raised by this project."""

    category = "error"


class ConfigError(RehabLabError):
    category = "config"


class ManifestError(RehabLabError):
    category = "manifest"


class PreconditionError(RehabLabError, ValueError):
    category = "precondition"


class MetricError(RehabLabError, ValueError):
    category = "metric"


class StochasticMatrixError(RehabLabError, ValueError):
    category = "precondition"


class BackendTransportError(RehabLabError):
    """Transient failures persisted past the configured retry limit."""

    category = "backend"

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class TransientBackendError(BackendTransportError):
    """A single retryable failure (HTTP 429, 5xx, connection reset, timeout)."""


class BackendProtocolError(RehabLabError):
    category = "backend"


class UnparseableReplyError(RehabLabError, ValueError):
    """A parser found no valid value in a model reply.

    Callers decide the fallback; parsers never default silently.
    """

    category = "unparseable"

    def __init__(self, kind: str, text: str):
        super().__init__(f"unparseable {kind} reply: {text[:80]!r}")
        self.kind = kind
        self.text = text


class ExtractionError(RehabLabError):
    category = "extraction"

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics
