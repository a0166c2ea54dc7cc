"""Exception classes shared across the package.

The CLI maps DataFormatError (and missing files) to exit code 2,
everything else to exit code 1.
"""


class DataFormatError(ValueError):
    """Malformed or inconsistent input data (CSV, TSV, binary embeddings, manifest)."""


class DimensionError(ValueError):
    """Tensor shape contract violated."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""
