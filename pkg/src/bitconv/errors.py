"""Exception hierarchy shared by all bitconv modules."""


class BitconvError(Exception):
    """Base class for user-facing errors raised by the library."""


class ShapeError(BitconvError, ValueError):
    pass


class IndexOutOfRange(BitconvError, IndexError):
    pass


class NumericError(BitconvError, ArithmeticError):
    pass


class FormatError(BitconvError, ValueError):
    """Malformed file or text input.

    ``line`` is set when the error can be attributed to a line of a
    text format (netspec files).
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetError(BitconvError):
    pass
