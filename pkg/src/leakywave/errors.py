"""Exception and warning types raised across the package."""


class LeakyWaveError(Exception):
    """Base class for all solver errors."""


class MonotonicityViolation(LeakyWaveError):
    pass


class SlopeViolation(LeakyWaveError):
    pass


class UnreachableDepth(LeakyWaveError):
    pass


class BranchCutHit(LeakyWaveError):
    pass


class DomainError(LeakyWaveError):
    pass


class PoleProximity(LeakyWaveError):
    pass


class SeparationTooSmall(LeakyWaveError):
    pass


class TurningPointError(LeakyWaveError):
    pass


class FitUnstable(LeakyWaveError):
    pass


class NearSingular(LeakyWaveError):
    pass


class SlopeConditionUnmet(LeakyWaveError):
    pass


class OutOfRegion(LeakyWaveError):
    pass


class ConfigError(LeakyWaveError):
    pass


class AccuracyLoss(UserWarning):
    pass


class StiffnessWarning(UserWarning):
    pass


class ModeMissRisk(UserWarning):
    pass
