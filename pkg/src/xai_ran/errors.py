"""Exception types shared across the package."""


class XaiRanError(Exception):
    """Base class for all package errors."""


class ConfigurationError(XaiRanError):
    """Invalid configuration value; the message names the offending field."""


class ContractViolation(XaiRanError):
    """Caller broke an API precondition (shape mismatch, stale cache, bad index)."""


class TraceParseError(XaiRanError):
    """Malformed trace CSV; the message carries the line number."""


class TraceValidationError(XaiRanError):
    """A trace row violates a KPM sample invariant."""


class SizeError(XaiRanError):
    """Input too small (or too large) for the requested operation."""


class DegenerateError(XaiRanError):
    """A denominator guard fired; the caller should fall back or exclude."""


class TrainingDivergenceError(XaiRanError):
    """Loss became non-finite during training."""


class MeasurementError(XaiRanError):
    """Clock samples were non-monotonic; the cycle must be discarded."""
