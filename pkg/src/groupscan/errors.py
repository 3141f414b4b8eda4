"""Exception types shared across the package.

Exit-code mapping lives in the CLI: DataQualityError -> 3, NumericalError -> 4,
usage problems -> 2.
"""


class GroupScanError(Exception):
    """Base class for package-specific failures."""


class DataQualityError(GroupScanError):
    """Raised when input data violates a contract (non-finite cells, bad rows,
    dimension mismatches). Message names the offending row/column when known."""


class NumericalError(GroupScanError):
    """Raised when a numerical procedure fails outright (e.g. EM cannot produce
    a valid model at any order)."""


class BatchExhausted(GroupScanError):
    """Signal: the remaining test batch is too small to host another cluster."""
