"""Exception hierarchy shared by all shimmer modules.

CLI exit codes: validation problems (bad arguments, broken invariants,
malformed files) exit 2, numeric failures exit 3, acceptance-floor
violations exit 4.
"""


class ShimmerError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(ShimmerError):
    """A domain invariant or precondition is violated."""

    exit_code = 2


class ArgumentError(ValidationError):
    """An operation was called with inconsistent arguments."""


class FormatError(ValidationError):
    """A file is not in the expected on-disk format."""


class NumericError(ShimmerError):
    """A numeric computation produced non-finite or unusable values."""

    exit_code = 3


class SingularityError(NumericError):
    """An unregularized division hit a near-zero denominator."""


class FloorError(ShimmerError):
    """An evaluation fell below a configured acceptance floor."""

    exit_code = 4
