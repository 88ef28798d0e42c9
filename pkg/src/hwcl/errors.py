"""Exception hierarchy.

``ValidationError`` covers bad inputs and configuration (CLI exit code 1);
``NumericalError`` covers divergence during optimization (CLI exit code 2).
"""


class HWCLError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HWCLError, ValueError):
    pass


class NumericalError(HWCLError, ArithmeticError):
    pass


class ZeroVector(ValidationError):
    """A vector whose norm is at or below the degeneracy threshold."""


class ShapeMismatch(ValidationError):
    pass


class InvalidTemperature(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class RewardShapeMismatch(ShapeMismatch):
    pass


class WrongVariant(ValidationError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class DuplicateDeviceId(ValidationError):
    pass


class NoNegatives(ValidationError):
    pass


class InvalidK(ValidationError):
    pass


class OutOfRangeValue(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class NonFiniteGradient(NumericalError):
    """Raised when a training step produces inf/nan; the run is aborted."""
