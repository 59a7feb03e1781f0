"""Exception hierarchy."""


class WashboardError(Exception):
    """Base class for all package errors."""


class BiasAboveCritical(WashboardError, ValueError):
    """Bias current at or above the critical current; the well has vanished."""


class NoBoundLevel(WashboardError):
    """No eigenstate satisfies the localization criterion."""


class SingularBalance(WashboardError):
    """Rate balance has no loss channel, so the escape rate is undefined."""


class ConvergenceError(WashboardError):
    """An iterative solver or fit failed to converge."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(WashboardError, ValueError):
    """Invalid experiment configuration."""
