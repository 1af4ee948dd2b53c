"""Exception hierarchy shared across the package.

Every error raised by debiaslab derives from DebiasLabError so callers can
catch the whole family; the CLI maps subfamilies to distinct exit codes.
"""


class DebiasLabError(Exception):
    """Base class for all debiaslab errors."""


class ConfigurationError(DebiasLabError):
    """Invalid configuration value; the message names the offending field."""


class DataError(DebiasLabError):
    """Malformed or inconsistent input data."""


class EmptyInputError(DataError):
    """An operation that requires at least one record received none."""


class ShapeError(DataError):
    """Array dimensions do not match the declared contract."""


class SingularDesignError(DataError):
    """Regression design is rank deficient; message names collinear columns."""


class InferenceError(DataError):
    """Covariance/inference request cannot be honored (e.g. too few clusters)."""


class PlanError(ConfigurationError):
    """Split plan is internally inconsistent (overlapping ranges or seeds)."""


class SplitViolationError(DataError):
    """Dataset split hygiene check failed hard (overlapping seed lineage)."""


class TrainingError(DebiasLabError):
    """Training loop failed (e.g. diverged to NaN). Carries the report so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ForecastParseError(DebiasLabError):
    """A forecaster response could not be parsed; carries the raw text."""

    def __init__(self, message, raw_text=""):
        super().__init__(message)
        self.raw_text = raw_text


class AgentFailure(DebiasLabError):
    """A forecaster failed on one round; the session flags the round and continues."""


class TransportError(DebiasLabError):
    """HTTP transport failed after exhausting retries."""


class ProtocolError(DebiasLabError):
    """Endpoint returned a body that does not match the chat-completions schema."""
