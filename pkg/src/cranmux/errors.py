"""Exception hierarchy shared by the analysis, simulator and CLI."""


class CranmuxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CranmuxError, ValueError):
    """Invalid parameters or an unparsable configuration file."""


class UnstableError(CranmuxError):
    """The requested operating point has utilization >= 1."""


class ConvergenceError(CranmuxError):
    """An iterative solver hit its iteration cap."""


class QuadratureError(ConvergenceError):
    """Adaptive quadrature did not reach the requested tolerance."""


class InfeasibleError(CranmuxError):
    """No server count up to the air-interface limit meets the target.

    ``best`` holds the best value seen during the search (for instance the
    largest ``Pr(t2 < tau)`` achieved), so callers can report how far off
    the target was.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
