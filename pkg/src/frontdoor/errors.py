"""Exception and warning types raised across the package."""


class FrontDoorError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FrontDoorError):
    """Input data or configuration is invalid."""


class EstimationError(FrontDoorError):
    """A fit or targeting step could not be completed."""


class MissingColumn(ValidationError):
    pass


class NonBinaryTreatment(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class TooManyFolds(ValidationError):
    pass


class RowMismatch(ValidationError):
    pass


class UnknownDgp(ValidationError):
    pass


class DimensionMismatch(EstimationError):
    pass


class AllZeroWeights(EstimationError):
    pass


class SeparationDetected(EstimationError):
    pass


class DegenerateOutcome(EstimationError):
    pass


class EmptyTreatmentArm(EstimationError):
    pass


class UnsupportedKind(EstimationError):
    pass


class InsufficientRowsInArm(EstimationError):
    pass


class TargetingWarning(UserWarning):
    """Emitted when a fluctuation step is skipped or the loop hits its cap."""


class MaxIterationsExceeded(TargetingWarning):
    pass


class EmptyEpsilonRange(TargetingWarning):
    pass
