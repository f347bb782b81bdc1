"""Exception hierarchy of roughsew.

Every error derives from :class:`RoughSewError` and from the builtin a
caller would catch for the same failure, so ``except ValueError`` keeps
working around argument problems.
"""

from typing import Any, Optional


class RoughSewError(Exception):
    """Base class for every error raised by the library."""


class IncompatibleAlphabetError(RoughSewError, ValueError):
    """Tensors, drivers or joint paths live over different dimensions."""


class GridError(RoughSewError, ValueError):
    """A time, interval or partition does not fit the sample grid."""


class LevelCapError(RoughSewError, ValueError):
    """Requested truncation exceeds the level cap or the entry cap."""


class PathFileError(RoughSewError, ValueError):
    """A path CSV file is missing, malformed or unsorted."""


class ConvergenceError(RoughSewError, ArithmeticError):
    """Successive refinements did not settle within the schedule.

    Attributes:
        previous: Second to last refined sum.
        last: Last refined sum.
        decay_exponent: Fitted decay order of the discrepancies, if measured.
    """

    def __init__(
        self,
        message: str,
        previous: Any = None,
        last: Any = None,
        decay_exponent: Optional[float] = None,
    ):
        super().__init__(message)
        self.previous = previous
        self.last = last
        self.decay_exponent = decay_exponent


class TruncationError(RoughSewError, ArithmeticError):
    """A truncated series or discretisation is too coarse for the tolerance."""


class UnboundedNormError(RoughSewError, ArithmeticError):
    """An ω-controlled norm is unbounded where a finite value is required."""


class InvariantViolation(RoughSewError, AssertionError):
    """An asserted identity or bound failed.

    Attributes:
        context: The violating tuple (times, indices, both sides).
    """

    def __init__(self, message: str, context: Any = None):
        super().__init__(message)
        self.context = context
