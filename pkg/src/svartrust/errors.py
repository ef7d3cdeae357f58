"""Exception hierarchy shared across the package."""


class SvarTrustError(Exception):
    """Base class for all package errors."""


class ParameterError(SvarTrustError, ValueError):
    """An argument is outside its admissible range."""


class DegenerateGraphError(SvarTrustError):
    """A structural matrix that must be invertible is singular."""


class InstabilityError(SvarTrustError):
    """A simulation produced non-finite or exploding values."""

    def __init__(self, message, seed=None):
        super().__init__(message if seed is None else f"{message} (seed={seed})")
        self.seed = seed


class DimensionError(SvarTrustError, ValueError):
    """Array shapes do not agree."""


class PriorParseError(SvarTrustError, ValueError):
    """A prior file could not be parsed into a numeric matrix."""


class NeighborhoodTooSmallError(SvarTrustError, ValueError):
    """Trust features need at least three variables."""


class ConstraintDomainError(SvarTrustError):
    """The log-det acyclicity penalty was evaluated outside its domain."""


class OptimizationDivergedError(SvarTrustError):
    """The optimizer could not make progress or produced non-finite loss."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class SplitError(SvarTrustError, ValueError):
    """The series is too short to split chronologically."""


class UndefinedMetricError(SvarTrustError, ValueError):
    """A ranking metric needs both positive and negative labels."""
