# utils/errors.py

class TrackingGPError(Exception):
    """Base class for every error raised by the library."""


class ConfigurationError(TrackingGPError):
    pass


class DataError(TrackingGPError):
    """Raised while ingesting CSV data. Carries the offending line number when known."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class NumericalError(TrackingGPError):
    pass


class DomainError(TrackingGPError):
    pass


class UnsupportedOperationError(TrackingGPError):
    pass


class OptimizationError(TrackingGPError):
    pass


class PreconditionError(TrackingGPError):
    pass


class InfeasibleTrainingError(TrackingGPError):
    """The constrained hyperparameter problem had no feasible candidate at constraint horizon k_bar."""

    def __init__(self, k_bar, outcome=None, trace=None):
        violation = outcome.max_violation if outcome is not None else float("nan")
        super().__init__(f"constrained hyperparameter problem infeasible at k_bar={k_bar} (max violation {violation:.3e})")
        self.k_bar = k_bar
        self.outcome = outcome
        self.trace = trace or []


class NonTerminationError(TrackingGPError):
    """The asymptotic trainer did not certify before reaching its k_bar cap. The trace holds every iteration."""

    def __init__(self, k_bar_max, trace):
        super().__init__(f"no certificate found up to k_bar_max={k_bar_max} after {len(trace)} iterations")
        self.k_bar_max = k_bar_max
        self.trace = trace
