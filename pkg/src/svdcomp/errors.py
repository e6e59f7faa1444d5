"""Exception hierarchy shared across the package."""


class SvdCompError(Exception):
    """Base class for all package errors."""


class ParseError(SvdCompError):
    """Input text does not follow the expected life-table layout."""


class NumericError(SvdCompError, ArithmeticError):
    """A numerical routine failed (non-convergence, rank deficiency, non-finite values)."""


class RankDeficientError(NumericError):
    """Design matrix is rank deficient.

    ``column`` is the 0-based index of the first column found to be a linear
    combination of the columns before it.
    """

    def __init__(self, message, column):
        super().__init__(message)
        self.column = column


class ModelFormatError(SvdCompError):
    """Model artifact has an unsupported or unrecognised format version."""


class CorruptModelError(ModelFormatError):
    """Model artifact is truncated, unparseable, or fails its checksum."""
