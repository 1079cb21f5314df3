"""Exception types shared across the package."""


class DegenerateError(ValueError):
    """A conditional or radial distribution carries (numerically) no mass."""


class EvaluationError(FloatingPointError):
    """A residual evaluation returned non-finite values."""
