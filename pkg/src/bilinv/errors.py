"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array size does not match what the operation expects."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class FactorizationError(RuntimeError):
    """A covariance or system matrix could not be factorized.

    ``pivot`` names the offending (original) index when known.
    """

    def __init__(self, message, pivot=None, value=None):
        self.pivot = pivot
        self.value = value
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """An iteration hit its cap. ``best`` holds the best estimate found."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)


class RangeWarning(UserWarning):
    """A vector has a component outside the range of a semidefinite covariance."""


class ZeroOperatorWarning(UserWarning):
    """The mean operator is identically zero; the bilinear problem is not identifiable."""
