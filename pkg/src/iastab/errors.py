"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration or argument violates a model invariant."""


class NumericFailureError(ArithmeticError):
    """An iterative numerical routine did not converge.

    Parameters
    ----------
    message : str
        Human readable description.
    partial : float, optional
        Value reached when the routine gave up.
    iterations : int, optional
        Number of iterations performed.
    """

    def __init__(self, message, partial=None, iterations=None):
        super().__init__(message)
        self.partial = partial
        self.iterations = iterations


class GuardError(RuntimeError):
    """An exhaustive enumeration was requested beyond its size guard."""


class InfeasibleArrivalError(ValueError):
    """An arrival vector lies outside every candidate stability region."""


class SearchBoundError(RuntimeError):
    """A monotone scan reached its upper bound without meeting the target."""
