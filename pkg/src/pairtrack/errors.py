"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and NumericError to exit code 3;
everything else is a plain failure.
"""


class PairtrackError(Exception):
    """Base class for all package errors."""


class ShapeError(PairtrackError):
    """Operands have incompatible or invalid dimensions."""


class ContractError(PairtrackError):
    """A documented precondition was violated by the caller."""


class ConfigError(PairtrackError):
    """Run configuration is invalid or inconsistent."""


class DegenerateInputError(PairtrackError):
    """Input is mathematically degenerate (e.g. zero-norm Gram matrix)."""


class NumericError(PairtrackError):
    """A computation produced non-finite values."""
