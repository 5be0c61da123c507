"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when an input dataset or sequence is malformed."""


class SequenceTooLongError(ValueError):
    """Raised when an assembled embedding stream exceeds the backbone limit."""


class NumericalError(ArithmeticError):
    """Raised when a forward pass, objective or gradient becomes non-finite."""
