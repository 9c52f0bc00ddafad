"""Exception types raised across the package."""


class ServoError(Exception):
    """Base class for all errors raised by this package."""


class AngleAtPi(ServoError):
    """Rotation angle too close to pi for the axis-angle chart."""


class BehindCamera(ServoError):
    pass


class NonPositiveDepth(ServoError):
    pass


class InvalidBounds(ServoError):
    pass


class NonFiniteCommand(ServoError):
    pass


class TooFewPoints(ServoError):
    pass


class DegenerateConfiguration(ServoError):
    """Point set is (nearly) collinear, so a rigid fit is not unique."""


class InsufficientMatches(ServoError):
    pass


class NoConsensus(ServoError):
    pass


class EmptyCloud(ServoError):
    pass


class PriorUnavailable(ServoError):
    """Global camera could not produce a bottleneck prior."""


class DegenerateSample(ServoError):
    pass


class NoValidDepth(ServoError):
    pass


class NonSPDCovariance(ServoError):
    pass


class AngleWrap(ServoError):
    """A sigma point crossed the pi boundary of the axis-angle chart."""


class DegenerateDepth(ServoError):
    pass


class StepBudgetExceeded(ServoError):
    pass


class OutOfWorkspace(ServoError):
    pass


class DegenerateSegment(ServoError):
    pass


class PreconditionViolated(ServoError):
    pass


class InsufficientSamples(ServoError):
    pass


class ConfigError(ServoError):
    pass
