"""Exception types shared across the package."""


class OrioError(Exception):
    """Base class for all package errors."""


class DimensionError(OrioError):
    """Array shapes do not chain or do not match a declared interface."""


class NonFiniteError(OrioError):
    """A loss, state, or parameter became NaN/inf; message names the term."""


class ConvergenceError(OrioError):
    """An iterative solve did not reach its tolerance; message carries the residual."""


class InfeasibleError(OrioError):
    """The safety-filter constraint cannot be satisfied by any input."""

    def __init__(self, message: str, sup_g: float | None = None):
        super().__init__(message)
        self.sup_g = sup_g


class FormatError(OrioError):
    """A persisted file is malformed, truncated, or has the wrong version."""


class ConfigError(OrioError):
    """Experiment configuration is missing keys or out of documented range."""


class BudgetExceededError(OrioError):
    """A runtime budget (e.g. allowed infeasible trials) was exceeded."""
