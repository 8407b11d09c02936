"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid arguments or malformed input data."""


class NumericalError(ArithmeticError):
    """A factorization or evaluation failed for numerical reasons."""


class FormatError(InputError):
    """A file could not be parsed (corrupt, truncated or wrong version)."""


class ReducedRankError(InputError):
    """Fewer usable eigenpairs than the requested embedding dimension."""

    def __init__(self, message: str, available: int):
        super().__init__(message)
        self.available = available
