"""Exception types raised across the package."""


class TrajsensError(Exception):
    """Base class for all errors raised by trajsens."""


class ContractViolationError(TrajsensError, ValueError):
    """Inputs do not match the documented shapes or preconditions."""


class NumericalDomainError(TrajsensError, ArithmeticError):
    """A computation produced non-finite values."""


class UnsupportedCapabilityError(TrajsensError, NotImplementedError):
    """The system does not provide a requested capability."""


class LinearSolveError(TrajsensError, ArithmeticError):
    """A per-step Jacobian block is singular or too badly conditioned."""

    def __init__(self, message, step=None, rcond=None):
        super().__init__(message)
        self.step = step
        self.rcond = rcond


class StepSolveError(TrajsensError, ArithmeticError):
    """Newton iteration for one implicit step failed to converge."""

    def __init__(self, message, step=None, residual_norm=None):
        super().__init__(message)
        self.step = step
        self.residual_norm = residual_norm


class RegularizationError(TrajsensError, ArithmeticError):
    """No diagonal shift within bounds made the Hessian positive definite."""


class LineSearchError(TrajsensError, ArithmeticError):
    """Backtracking exhausted without satisfying the Armijo condition."""


class ConfigError(TrajsensError, ValueError):
    """An experiment configuration failed to parse or validate."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
