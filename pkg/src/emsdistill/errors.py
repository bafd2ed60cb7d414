"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class DataError(ValueError):
    """Input data is malformed, misaligned or insufficient."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested primitive."""


class NumericError(FloatingPointError):
    """A NaN/inf showed up where a finite number was required."""
