"""Exception hierarchy shared by all modules."""


class ZosfmError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ZosfmError, ValueError):
    """An input vector does not match the ground-set size."""


class DomainError(ZosfmError, ValueError):
    """A point has non-finite coordinates or lies outside a required domain."""


class ParameterError(ZosfmError, ValueError):
    """A numeric parameter is outside its admissible range."""


class CapabilityError(ZosfmError):
    """The request exceeds what an exhaustive routine can enumerate."""


class NumericError(ZosfmError, ArithmeticError):
    """A factorisation or evaluation failed numerically."""


class ConfigError(ZosfmError):
    """An experiment configuration is malformed or inconsistent."""


class IterationError(ZosfmError):
    """A solver failed mid-run.

    ``iteration`` is the index of the failing step and ``trace`` holds the
    partial record collected up to that point (may be ``None``).
    """

    def __init__(self, message, iteration, trace=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.trace = trace
