"""Exception hierarchy shared by all modules.

Every domain error derives from :class:`IdResnetError` so the CLI can map
error classes to exit codes in one place.
"""


class IdResnetError(Exception):
    """Base class for all domain errors."""


class DimensionMismatch(IdResnetError, ValueError):
    pass


class NotOrthogonal(IdResnetError, ValueError):
    pass


class OddReflectionCount(IdResnetError, ValueError):
    pass


class SingularTarget(IdResnetError, ValueError):
    pass


class NegativeDeterminant(IdResnetError, ValueError):
    pass


class DepthTooSmall(IdResnetError, ValueError):
    pass


class NotSymmetricPSD(IdResnetError, ValueError):
    pass


class OutsideBall(IdResnetError, ValueError):
    pass


class Diverged(IdResnetError, RuntimeError):
    """Gradient descent blew up. ``trace`` holds the records up to the failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DuplicatePoints(IdResnetError, ValueError):
    pass


class SeparationViolated(IdResnetError, ValueError):
    pass


class ProjectionFailed(IdResnetError, RuntimeError):
    pass


class SurrogateCorrelated(IdResnetError, RuntimeError):
    pass
