"""Exception hierarchy shared by all receiver stages."""


class IccError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(IccError, ValueError):
    """Invalid system configuration, scenario, or inconsistent dimensions."""


class DegenerateInputError(IccError, ValueError):
    """Input for which the requested quantity is undefined (e.g. empty mean)."""


class DomainError(IccError, ValueError):
    """Argument outside the domain of a nomographic pre-processing function."""


class SingularSystemError(IccError, ArithmeticError):
    """A linear system that must be positive definite / invertible is not."""


class NumericalDivergence(IccError, ArithmeticError):
    """A message-passing sweep produced non-finite values."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class CombinerDivergence(IccError, ArithmeticError):
    """The GaBP linear solver's residual grew for too many consecutive sweeps.

    The last iterate is attached as ``last_iterate`` so callers can inspect it
    or fall back to a direct solve.
    """

    def __init__(self, message: str, iteration: int, last_iterate):
        super().__init__(f"{message} (sweep {iteration})")
        self.iteration = iteration
        self.last_iterate = last_iterate


class OutputError(IccError, OSError):
    """Reading or writing a scenario or result file failed."""
