"""Exception hierarchy shared by every module."""


class DHLError(Exception):
    """Base class for all package errors."""


class ArgumentError(DHLError, ValueError):
    """An argument is malformed or out of range."""


class PreconditionError(DHLError):
    """An operation was called outside its mathematical hypotheses."""


class DomainError(DHLError):
    """A geometric or discretization domain is invalid (empty, u <= 0, ...)."""


class NumericError(DHLError):
    """A numerical kernel failed (non-convergence, singular solve)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonConvergenceError(NumericError):
    """Newton iteration hit its damping floor or iteration cap."""

    def __init__(self, message, last_iterate=None, residual=None, iterations=0):
        super().__init__(message, residual=residual)
        self.last_iterate = last_iterate
        self.iterations = iterations
