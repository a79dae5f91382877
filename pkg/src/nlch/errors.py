"""Exception types shared across the package."""


class NLCHError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NLCHError):
    """A parameter or config file violates a documented precondition."""


class GridMismatchError(NLCHError):
    """Two objects that must share a grid do not."""


class DomainError(NLCHError):
    """A potential was evaluated outside its domain of definition."""


class SnapshotFormatError(NLCHError):
    """A snapshot file is malformed or has the wrong version/dimensions."""


class StepFailure(NLCHError):
    """The nonlinear solver did not reach the residual tolerance.

    Carries the best residual norm seen and the number of iterations spent,
    so the caller can decide to retry with a smaller time step.
    """

    def __init__(self, message, best_residual, iterations):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class SimulationError(NLCHError):
    """A simulation aborted; partial outputs are retained on disk."""

    def __init__(self, message, step_index, cause=None):
        super().__init__(message)
        self.step_index = step_index
        self.cause = cause
