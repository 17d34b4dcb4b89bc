"""Exception hierarchy shared by every scsl module."""


class SCSLError(Exception):
    """Base class for all errors raised by scsl."""


class ConfigError(SCSLError, ValueError):
    """Invalid configuration or out-of-range argument."""


class DomainViolation(SCSLError, ValueError):
    """A value lies outside the domain an operation accepts."""


class ParseError(SCSLError, ValueError):
    """A CSV cell or header could not be parsed."""


class MismatchedRows(SCSLError, ValueError):
    """The X and Y matrices have different row counts."""


class DuplicateColumn(SCSLError, ValueError):
    """A column label appears twice in one header."""


class LengthMismatch(SCSLError, ValueError):
    """Vectors that must have equal length do not."""


class ShapeMismatch(SCSLError, ValueError):
    """Matrices that must share a shape do not."""


class MaskShapeError(SCSLError, ValueError):
    """A conditioning mask does not fit the model it is applied to."""


class DegenerateVariance(SCSLError, ArithmeticError):
    """The residual products are constant, so the GCM statistic is undefined.

    ``constant`` holds the common value of the products.
    """

    def __init__(self, message, constant=0.0):
        super().__init__(message)
        self.constant = constant


class DegenerateLikelihood(SCSLError, ArithmeticError):
    """Every categorical resampling weight is non-finite."""


class NonFiniteLoss(SCSLError, ArithmeticError):
    """Training diverged; usually the learning rate is too large."""
