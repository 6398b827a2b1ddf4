"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: data/format problems
(exit 2) and numerical failures (exit 3).
"""


class MouseLiftError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class DataError(MouseLiftError, ValueError):
    exit_code = 2


class NumericFailure(MouseLiftError, ArithmeticError):
    exit_code = 3


class ShapeError(DataError):
    pass


class FormatError(DataError):
    pass


class StageMissingError(DataError):
    pass


class SpecError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class NoObservationsError(DataError):
    pass


class UnderdeterminedError(DataError):
    pass


class InsufficientViewsError(DataError):
    pass


class DegenerateTruthError(DataError):
    pass


class NonFiniteError(NumericFailure):
    pass


class DegeneratePoseError(NumericFailure):
    pass


class BehindCameraError(NumericFailure):
    pass


class DegenerateGeometryError(NumericFailure):
    pass


class RegistrationError(NumericFailure):
    pass


class NoPeriodicityError(NumericFailure):
    pass
