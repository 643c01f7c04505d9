"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numeric failures -> 3.
"""


class VburstError(Exception):
    """Base class for package errors."""


class UsageError(VburstError):
    """Bad command-line invocation or inconsistent options."""


class DataError(VburstError):
    """Invalid input data: bad manifest, missing class, mismatched ids."""


class FormatError(DataError):
    """Malformed file contents (WAV/MAT1/EMB1/BKPT)."""


class NumericError(VburstError):
    """Numeric failure, e.g. NaN loss during training."""
