"""Exception hierarchy shared by every brqlab module."""


class BrqError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


class UnsupportedFormat(BrqError, ValueError):
    pass


class CorruptFile(BrqError, ValueError):
    pass


class TooShort(BrqError, ValueError):
    pass


class EmptyInput(BrqError, ValueError):
    pass


class InvalidConfig(BrqError, ValueError):
    pass


class DimensionMismatch(BrqError, ValueError):
    pass


class ShapeMismatch(BrqError, ValueError):
    pass


class LengthMismatch(BrqError, ValueError):
    pass


class IndexOutOfRange(BrqError, ValueError):
    pass


class EmptyMask(BrqError, ValueError):
    """No masked positions; callers skip the batch."""


class InvalidEpsilon(BrqError, ValueError):
    pass


class InvalidRange(BrqError, ValueError):
    pass


class EmptyManifest(BrqError, ValueError):
    pass


class DegenerateLabels(BrqError, ValueError):
    pass


class EmptyEval(BrqError, ValueError):
    pass


class InvalidGrid(BrqError, ValueError):
    pass


class NonFiniteGradient(BrqError, ArithmeticError):
    exit_code = 3
