"""Exception types raised across the package."""


class ChaosflockError(Exception):
    pass


class QuadratureBudgetExceeded(ChaosflockError):
    """Requested tolerance not reached at the configured quadrature order."""


class H2Violation(ChaosflockError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NonFiniteState(ChaosflockError):
    pass


class SpeedBoundBreach(ChaosflockError):
    pass


class CflViolation(ChaosflockError):
    pass


class BoundBlowup(ChaosflockError):
    pass


class DimensionMismatch(ChaosflockError):
    pass


class SizeLimitExceeded(ChaosflockError):
    pass


class CaseExcluded(ChaosflockError):
    pass


class InsufficientReplicas(ChaosflockError):
    pass


class ConfigError(ChaosflockError):
    pass
