# igdf/errors.py
"""
Exception hierarchy shared by every igdf subpackage.

Value-like failures also subclass ValueError so callers that only know the
builtin can still catch them.
"""


class IgdfError(Exception):
    """Base class for all igdf errors."""


class ShapeError(IgdfError, ValueError):
    """An array argument has the wrong width, length or rank."""


class UnsupportedKindError(IgdfError, ValueError):
    """An operation was handed a dataset or env of the wrong state kind."""


class DatasetFormatError(IgdfError, ValueError):
    """A dataset or checkpoint file could not be parsed."""


class NonFiniteGradientError(IgdfError, ArithmeticError):
    """An optimizer received a NaN or infinite gradient."""

    def __init__(self, parameter: str):
        self.parameter = parameter
        super().__init__(f"Non-finite gradient for parameter '{parameter}'")
