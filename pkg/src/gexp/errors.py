"""Exception hierarchy.

``ValidationError`` covers bad inputs and violated preconditions (CLI exit 2),
``SolverError`` covers numerical failures (CLI exit 1).
"""


class GexpError(Exception):
    pass


class ValidationError(GexpError, ValueError):
    pass


class SolverError(GexpError, RuntimeError):
    pass


class DepthTooLarge(ValidationError):
    pass


class NonPositiveHorizon(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LevelOutOfRange(ValidationError):
    pass


class NonPositiveParameter(ValidationError):
    pass


class UnboundedDrift(ValidationError):
    pass


class ContractionViolated(ValidationError):
    pass


class OverflowGuard(ValidationError):
    pass


class StepTooCoarse(ValidationError):
    pass


class PositivityViolated(ValidationError):
    pass


class DenominatorNearZero(ValidationError):
    pass


class BoundViolation(ValidationError):
    pass


class InteriorityViolated(ValidationError):
    pass


class PreconditionError(ValidationError):
    pass


class CError(ValidationError):
    """Multiplier outside the admissible interval, so the test level leaves [0, 1]."""


class FixedPointDiverged(SolverError):
    pass


class CycleDetected(SolverError):
    def __init__(self, message, states=None):
        super().__init__(message)
        self.states = states


class NotBracketed(SolverError):
    pass


class BracketExpansionFailed(SolverError):
    pass


class OuterNoConvergence(SolverError):
    def __init__(self, message, iterates=None):
        super().__init__(message)
        self.iterates = iterates


class NonConvexDetected(SolverError):
    pass
