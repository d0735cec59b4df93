"""Exception types shared across the package."""


class BPlanError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class GenerationExhausted(BPlanError):
    pass


class DegenerateNeighborhood(BPlanError):
    pass


class ResolutionTooFine(BPlanError):
    pass


class OutOfBounds(BPlanError):
    pass


class NoFeasibleParent(BPlanError):
    pass


class StartInCollision(BPlanError):
    pass


class TooFewWaypoints(BPlanError):
    pass


class ShapeMismatch(BPlanError):
    pass


class OddDimension(BPlanError):
    pass


class CorruptFile(BPlanError):
    pass


class EmptyInput(BPlanError):
    pass
