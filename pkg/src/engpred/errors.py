"""Exception hierarchy shared across the package."""


class EngpredError(Exception):
    """Base class for all library errors."""


class DataError(EngpredError):
    """Malformed, missing, or inconsistent input data."""


class NumericError(EngpredError):
    """Numeric failure: degenerate statistics, failed fits, diverged training."""


class NonFiniteError(NumericError):
    """A computation produced NaN or infinity."""


class FitError(NumericError):
    """An envelope fit could not be performed on the given records."""
