"""Exception hierarchy shared by every module in the package."""


class GpuShareError(Exception):
    """Base class for all package errors."""


class ConfigError(GpuShareError):
    """Bad or incomplete configuration: missing profile, unknown policy, bad file."""


class ValidationError(GpuShareError, ValueError):
    """An argument violates a documented precondition."""


class FitError(GpuShareError):
    """Profile fitting cannot proceed (under-determined or degenerate data)."""


class InfeasiblePairError(GpuShareError):
    """No memory-feasible sub-batch exists for co-locating two jobs."""


class ConstraintError(GpuShareError):
    """A gang/capacity constraint was violated. Always a scheduler bug."""


class InvariantViolation(GpuShareError):
    """A simulation invariant failed during an event-boundary audit."""


class TraceParseError(ConfigError):
    """A trace document is malformed."""

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record
