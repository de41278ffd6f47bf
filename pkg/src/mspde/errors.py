"""Shared exception types."""


class DimensionMismatchError(ValueError):
    """Operand truncation levels disagree."""


class DomainError(ValueError):
    """Argument outside the mathematically admissible range."""


class ConfigurationError(ValueError):
    """Malformed run configuration (unknown key, empty list, ...)."""


class CenteringError(RuntimeError):
    """Observable fails the centering precondition of the cell problem."""


class HorizonError(RuntimeError):
    """Could not find a truncation horizon with a decaying envelope."""


class DivergenceError(RuntimeError):
    """Trajectory produced non-finite values."""


class MemoryBudgetError(RuntimeError):
    """Requested storage exceeds the configured budget."""


class RangeError(ValueError):
    """Query point outside the validated range of the estimator."""


class EstimatorIllConditioned(RuntimeError):
    """Estimate too noisy or structurally invalid to factor/report."""


class RunFailure(RuntimeError):
    """Hard failure of an experiment run (maps to exit code 1)."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
