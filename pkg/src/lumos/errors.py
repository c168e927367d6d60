"""Exception types raised by the lumos library.

Data errors (bad inputs on disk, malformed grids) and numerical failures
are kept distinct so the CLI can map them to different exit codes.
"""


class LumosError(Exception):
    """Base class for all library errors."""


class DataError(LumosError):
    """Base class for errors caused by bad input data."""


class NumericalError(LumosError):
    """Base class for numerical failures during optimization."""


class ConfigError(LumosError):
    """Invalid or inconsistent configuration."""


# lf-data
class MissingView(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NotSquareGrid(DataError):
    pass


class InfeasiblePattern(DataError):
    pass


class BadCount(DataError):
    pass


# optics
class NonPositiveDistance(ConfigError):
    pass


class OutOfPupil(DataError):
    pass


class BadRange(DataError):
    pass


class ConfigMismatch(ConfigError):
    pass


class LengthMismatch(DataError):
    pass


class SlopeTooLarge(DataError):
    pass


# autodiff
class NonScalarLoss(LumosError):
    pass


class DomainError(LumosError):
    pass


# display
class BadMode(ConfigError):
    pass


# metrics
class NonNegativeBetaRequired(ConfigError):
    pass


class ImageTooSmall(DataError):
    pass


# trainer
class NonFiniteLoss(NumericalError):
    pass
