"""Exception types shared across the package."""


class RaluError(Exception):
    """Base class for all package errors."""


class ShapeError(RaluError, ValueError):
    pass


class DomainError(RaluError, ValueError):
    pass


class ContractError(RaluError):
    """An operation was called on state that violates its precondition."""


class ConsistencyError(RaluError):
    """Derived quantities (stage intervals, coefficients) are inconsistent."""


class ScheduleSolveError(RaluError):
    """The shift/noise search did not converge; ``best`` holds the best plan seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
