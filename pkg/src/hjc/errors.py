"""Exception hierarchy shared by all solver modules."""


class HJCError(Exception):
    """Base class for every error raised by :mod:`hjc`."""


class ConfigurationError(HJCError, ValueError):
    """Inputs are inconsistent or out of their declared ranges."""


class DomainError(HJCError, ValueError):
    """A function was evaluated outside its domain of definition."""


class AdmissibilityError(DomainError):
    """A trait left the admissible region {R(x, 0) > 0}."""


class SolverError(HJCError, RuntimeError):
    """An iterative solve failed to converge.

    Attributes
    ----------
    residual : float
        Last residual (or step size) observed before giving up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class DegeneracyError(SolverError):
    """A matrix that must be invertible (negative definite Hessian) is not."""


class NonConcaveError(SolverError):
    """Maximizer search on a function assumed strictly concave failed."""


class IntervalTooLongError(SolverError):
    """The fixed-point map did not contract on the requested interval."""


class InternalConsistencyError(HJCError, RuntimeError):
    """A restart state violated the conditions it is guaranteed to satisfy."""


class BlowUpError(HJCError, RuntimeError):
    """A viscous simulation produced an out-of-range competition term."""
