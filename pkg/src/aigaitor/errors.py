"""Exception hierarchy shared across the package."""


class AigaitorError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(AigaitorError):
    """Invalid user-supplied parameters (out of range, unreachable pose, ...)."""


class ValidationError(AigaitorError):
    """A pose sequence failed invariant validation.

    Carries the offending violations in ``.violations``.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ProjectionError(AigaitorError):
    """Camera projection of a point with non-positive depth."""


class FormatError(AigaitorError):
    """Malformed pose-file bytes (bad magic, version, or field values)."""


class TruncationError(FormatError):
    """Pose-file payload length differs from what the header promises."""

    def __init__(self, expected_bytes, actual_bytes):
        super().__init__(
            f"payload length mismatch: expected {expected_bytes} bytes, "
            f"got {actual_bytes}"
        )
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes


class ConfigurationError(AigaitorError):
    """Inconsistent configuration: shape mismatches, unknown stage names, ..."""


class NormalizationError(AigaitorError):
    """Window normalization hit a degenerate scale."""


class AnalysisError(AigaitorError):
    """Downstream analysis cannot proceed (no windows, too few confident frames)."""


class OptimizationError(AigaitorError):
    """Refinement diverged. Carries the objective trace in ``.trace``."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class InconsistencyError(AigaitorError):
    """Latency calibration produced an impossible (negative) overhead."""
