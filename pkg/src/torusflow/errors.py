"""Exception types shared across the torusflow modules."""


class TorusflowError(Exception):
    """Base class for all torusflow errors."""


class KernelTooWide(TorusflowError):
    """Mollifier support radius reaches a quarter period or more."""


class KernelUnresolved(TorusflowError):
    """Mollifier support is not resolved by at least 4 grid cells."""


class LostEllipticity(TorusflowError):
    """An operation produced a metric that is no longer positive definite."""


class SingularMetric(TorusflowError):
    """Pointwise inversion of the metric failed (ill-conditioned or indefinite)."""


class SpecInfeasible(TorusflowError):
    """Requested singular-metric parameters violate the integrability hypotheses."""


class UnresolvedCutoff(TorusflowError):
    """Cutoff radius is not resolved by at least 6 grid cells."""


class NegativeTerminalData(TorusflowError):
    """Backward heat solve requires nonnegative terminal data."""


class TrajectoryTooCoarse(TorusflowError):
    """Checkpoint interpolation produced a non-elliptic metric."""


class InsufficientSamples(TorusflowError):
    """Not enough samples in the requested fit window."""


class ConfigInvalid(TorusflowError):
    """Scenario configuration failed validation."""


class MismatchedScenarios(TorusflowError):
    """Attempted to compare runs of different scenarios or ladders."""
