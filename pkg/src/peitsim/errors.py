"""Exception hierarchy shared by all modules."""


class PeitError(Exception):
    """Base class."""


class ConfigError(PeitError, ValueError):
    pass


class SolverFailure(PeitError, RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class StructuralInstability(PeitError, ValueError):
    pass


class PoleError(PeitError, ZeroDivisionError):
    pass


class DomainError(PeitError, ValueError):
    pass


class DimensionCapError(PeitError, ValueError):
    pass


class IntegrationAccuracyError(PeitError, RuntimeError):
    pass


class SteadyStateAmbiguity(PeitError, RuntimeError):
    pass


class RegimeViolation(PeitError, RuntimeError):
    pass


class AccuracyWarning(UserWarning):
    pass


class FitQualityWarning(UserWarning):
    pass
