"""Exception hierarchy shared by all modules."""


class BubbleTreeError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 3


class InputError(BubbleTreeError):
    exit_code = 2


class CheckFailed(BubbleTreeError):
    exit_code = 1


class DegenerateTriangle(BubbleTreeError):
    pass


class FrameDiscontinuity(BubbleTreeError):
    pass


class DegreeUnreliable(BubbleTreeError):
    pass


class EmptyRegion(InputError):
    pass


class AntipodalAmbiguity(BubbleTreeError):
    pass


class WindowTouchesPole(InputError):
    pass


class AmbiguousOrder(BubbleTreeError):
    pass


class ThresholdExceeded(BubbleTreeError):
    pass


class SolverDiverged(BubbleTreeError):
    pass


class ZeroDenominator(BubbleTreeError):
    pass


class ResolutionLimit(BubbleTreeError):
    pass


class IllConditionedMode(BubbleTreeError):
    pass


class OrientationDegenerate(BubbleTreeError):
    pass


class NotContracting(BubbleTreeError):
    pass


class SupportOverflow(BubbleTreeError):
    pass


class PreconditionEnergy(BubbleTreeError):
    pass


class PreconditionViolation(BubbleTreeError):
    pass


class NotCauchy(BubbleTreeError):
    pass


class DiameterCollapse(BubbleTreeError):
    pass


class RecursionBudgetExceeded(BubbleTreeError):
    pass


class ParameterOutOfRange(InputError):
    pass
