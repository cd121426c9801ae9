"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedBranchError(ValueError):
    """The requested Hurst regime is not implemented (kernel methods need H > 1/2)."""


class AlignmentError(ValueError):
    """Grids, breakpoints or time nodes do not line up."""


class PreconditionError(ValueError):
    """A documented precondition on the parameters does not hold."""


class FactorizationError(ValueError):
    """Cholesky factorization of a covariance matrix failed."""

    def __init__(self, message, minor=None):
        super().__init__(message)
        self.minor = minor


class InfeasibleError(RuntimeError):
    """No horizon on the time grid satisfies the existence-time inequalities."""

    def __init__(self, message, binding=None, immediate=False):
        super().__init__(message)
        self.binding = binding
        self.immediate = immediate


class DivergenceError(RuntimeError):
    """A Picard iterate left the ball where the fixed-point argument applies."""
