"""Exception types shared across the package.

Two families: bad input (config, data, dimensions) and numerical
breakdown (factorizations or update chains losing validity).  The CLI
maps the first to exit code 2 and the second to exit code 3.
"""


class InputError(ValueError):
    """Invalid configuration, malformed data, or dimension mismatch."""


class IngestError(InputError):
    """CSV ingestion failure; the message names the offending row/column."""


class NumericalBreakdownError(ArithmeticError):
    """A factorization or incremental update lost numerical validity."""


class AssemblyError(NumericalBreakdownError):
    """A bordered system could not be assembled (rank-deficient trend basis)."""
