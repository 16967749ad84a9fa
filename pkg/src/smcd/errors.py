"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data errors
exit 2, numeric failures exit 3.
"""


class DataError(Exception):
    """Invalid runtime data: bad file contents, dimension mismatches."""


class FormatError(DataError):
    """Byte-level violation of one of the binary file layouts."""


class NumericError(Exception):
    """Numerical failure inside the optimizer (non-convergence, bad conditioning)."""


class UsageError(Exception):
    """Invalid command-line flags or flag combinations."""
