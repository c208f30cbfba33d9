"""Exception hierarchy."""


class SpacingError(Exception):
    """Base class for all errors raised by :mod:`tspacing`."""


class DomainMismatch(SpacingError, ValueError):
    """Points, tensors or models that do not live on the same space."""


class InvalidTangent(SpacingError, ValueError):
    """A tangent vector that cannot be used (e.g. zero where a direction is needed)."""


class DegenerateLambda2(SpacingError):
    """The gradient covariance is singular at the requested point."""


class PoleEvaluation(SpacingError, ValueError):
    """The conditional field was evaluated at its pole."""


class NearSingularDenominator(SpacingError):
    """``1 - c(s, t)`` vanished away from the pole; the covariance is broken."""


class NotCritical(SpacingError, ValueError):
    """An operation that needs a critical point received a non-critical one."""


class DegeneratePointSet(SpacingError):
    """The conditional covariance of a point set is (numerically) singular."""


class OptimizationFailed(SpacingError):
    """No start of a multistart search reached the gradient tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EstimationFailed(SpacingError):
    """The variance estimator could not find a non-degenerate point set."""


class MomentDiverges(SpacingError, ValueError):
    """A Student moment needed by the t-spacing functional does not exist."""


class DegenerateDenominator(SpacingError):
    """The p-value denominator underflowed; no p-value is reported."""
