"""Exception types raised across the package."""


class DProSTError(Exception):
    """Base class for all package errors."""


class DegenerateRotationInput(DProSTError, ValueError):
    pass


class InvalidBasisChange(DProSTError, ValueError):
    pass


class InvalidPose(DProSTError, ValueError):
    pass


class DegenerateBox(DProSTError, ValueError):
    pass


class DistanceTooSmall(DProSTError, ValueError):
    pass


class StageMismatch(DProSTError, ValueError):
    pass


class ShapeMismatch(DProSTError, ValueError):
    pass


class EmptyPointSet(DProSTError, ValueError):
    pass


class EmptyTrainingSet(DProSTError, ValueError):
    pass


class EmptyReferenceSet(DProSTError, ValueError):
    pass


class PointBehindCamera(DProSTError, ValueError):
    pass


class NonFiniteLoss(DProSTError, FloatingPointError):
    """Objective evaluated to NaN or inf. Carries the partial trace when raised by the refiner."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ParseError(DProSTError, ValueError):
    pass


class ConventionUnknown(ParseError):
    pass


class FormatError(DProSTError, ValueError):
    pass


class TruncatedFile(FormatError):
    pass
