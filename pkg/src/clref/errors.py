class ContractError(ValueError):
    """Raised when inputs violate an operation's preconditions."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during a computation.

    ``where`` names the layer, coordinate or iteration that produced it.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateError(ArithmeticError):
    """Gradient too small for a normalized direction to be defined."""
