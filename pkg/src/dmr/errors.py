"""Exception hierarchy.

Errors fall into three families that the CLI maps to exit codes:
usage problems (2), bad input data (3) and numerical failures (4).
"""


class DmrError(Exception):
    exit_code = 1


class UsageError(DmrError):
    exit_code = 2


class DataError(DmrError, ValueError):
    exit_code = 3


class NumericalError(DmrError, ArithmeticError):
    exit_code = 4


# data errors
class DuplicateCell(DataError):
    pass


class OutOfRangeIndex(DataError):
    pass


class NonPositiveCount(DataError):
    pass


class ZeroVarianceColumn(DataError):
    pass


class DuplicateDocId(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyFold(DataError):
    pass


class DoubleAccumulate(DataError):
    pass


class MissingProjection(DataError):
    pass


class DimensionFirewall(DataError):
    """Raised when raw counts are handed to a forward-regression design."""


class InvalidSpec(DataError):
    pass


class CapExceeded(DataError):
    pass


class FormatError(DataError):
    pass


# numerical errors
class NonFiniteValue(NumericalError):
    pass


class DidNotConverge(NumericalError):
    pass


class DegenerateDf(NumericalError):
    pass


class RankDeficientControls(NumericalError):
    pass
