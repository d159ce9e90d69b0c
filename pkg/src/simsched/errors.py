"""Exception types shared across the package."""


class SimschedError(Exception):
    """Base class for all package errors."""


class InvalidInput(SimschedError):
    pass


class EmptyTrajectory(SimschedError):
    pass


class BudgetExceeded(SimschedError):
    pass


class StateMismatch(SimschedError):
    pass


class UnknownVariable(SimschedError):
    pass


class AdvisorUnavailable(SimschedError):
    pass


class DiscoveryTruncated(SimschedError):
    """Raised when discovery hits the turn cap; carries the partial result."""

    def __init__(self, message, skeleton=None, history=None):
        super().__init__(message)
        self.skeleton = skeleton
        self.history = history


class UnreachableObjective(SimschedError):
    pass


class TrainingDiverged(SimschedError):
    pass


class InsufficientData(SimschedError):
    pass


class InvalidK(SimschedError):
    pass


class IllConditioned(SimschedError):
    pass


class UnknownAlgorithm(SimschedError):
    pass


class MissingReference(SimschedError):
    pass


class HardCapacityViolated(SimschedError):
    pass


class OperatorFailure(SimschedError):
    """Signals that a revision operator could not produce a proposal."""


class ArtifactError(SimschedError):
    """Bad or missing on-disk artifact (wrong schema major, absent stage output)."""
