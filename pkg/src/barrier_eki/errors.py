"""Exception hierarchy shared by all modules."""


class BarrierEKIError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(BarrierEKIError, ValueError):
    """Shapes, dimensions or parameter values violate a precondition."""


class InvalidBoundsError(InvalidInputError):
    """Box bounds with ``lower >= upper`` on a constrained index."""


class FactorizationError(InvalidInputError):
    """A matrix that must be symmetric positive definite is not."""


class InvalidModelError(InvalidInputError):
    """Forward model data (noise or prior covariance) is unusable."""


class InvalidStartError(InvalidInputError):
    """An optimization was started from a point that is not strictly feasible."""


class DegenerateSpanError(BarrierEKIError):
    """The ensemble span has rank zero (fully collapsed ensemble)."""


class FeasibilityMarginError(BarrierEKIError):
    """A point lies within the strict-feasibility margin of the boundary.

    Attributes
    ----------
    margin : float
        ``max_i h_i(u)`` at the offending point.
    """

    def __init__(self, message, margin=float("nan")):
        super().__init__(message)
        self.margin = margin


class UnsupportedOperationError(BarrierEKIError):
    """The operation needs a capability the object does not provide."""


class StiffnessAbortError(BarrierEKIError):
    """The step size fell below its minimum.

    Attributes
    ----------
    t, margin, tau : float
        Time, mean feasibility margin and penalty parameter at the abort.
    """

    def __init__(self, message, t=float("nan"), margin=float("nan"), tau=float("nan")):
        super().__init__(message)
        self.t = t
        self.margin = margin
        self.tau = tau


class DivergenceError(BarrierEKIError):
    """The integrated state became non-finite."""

    def __init__(self, message, t=float("nan")):
        super().__init__(message)
        self.t = t


class SolverFailureError(BarrierEKIError):
    """A linear solve failed."""


class PartialResultError(BarrierEKIError):
    """A barrier ladder stage did not converge.

    Attributes
    ----------
    last_good : object or None
        The last converged stage result, if any.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class UndefinedRateError(BarrierEKIError):
    """A log-log fit was requested on non-positive or too few values."""


class ConfigError(InvalidInputError):
    """Unknown or malformed configuration keys."""
