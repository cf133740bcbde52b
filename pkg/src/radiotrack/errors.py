"""Exception types raised across the package."""


class DataError(ValueError):
    """Input records are malformed, inconsistent, or cannot be resolved."""


class DegenerateGeometryError(ValueError):
    """Target and receiver coincide, so the field amplitude is undefined."""


class NumericalError(ArithmeticError):
    """A factorization or evaluation produced unusable numbers."""


class OptimizationError(RuntimeError):
    """An optimizer could not make progress on a finite objective.

    The partial trace is kept on the ``trace`` attribute.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
