"""Exception types shared across the package."""


class KlnError(Exception):
    """Base class for all library errors."""


class ShapeError(KlnError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class AsymmetricMatrixError(KlnError, ValueError):
    """A matrix required to be symmetric exceeds the symmetry tolerance."""


class NotPositiveDefiniteError(KlnError, ArithmeticError):
    """Cholesky factorization hit a non-positive pivot.

    ``pivot`` is the 0-based index of the failing leading minor.
    """

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix not positive definite (pivot index {pivot})")


class NonFiniteError(KlnError, ValueError):
    """NaN or Inf encountered where finite values are required."""


class BackwardWithoutForwardError(KlnError, RuntimeError):
    """Backward pass requested but the forward intermediates were not retained."""


class IdxFormatError(KlnError, ValueError):
    """Malformed IDX file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class CheckpointError(KlnError, ValueError):
    """Malformed or unreadable model checkpoint."""


class DataError(KlnError, ValueError):
    """Invalid dataset construction or split request."""


class ConfigError(KlnError, ValueError):
    """Invalid configuration: unknown key, bad value, or conflicting flags."""
