"""Exception hierarchy shared by all flatmetric modules."""


class FlatMetricError(Exception):
    """Base class for every error raised by this package."""


class ZeroMass(FlatMetricError, ValueError):
    pass


class InvalidRadius(FlatMetricError, ValueError):
    pass


class InvalidSplit(FlatMetricError, ValueError):
    pass


class NegativeIntensity(FlatMetricError, ValueError):
    pass


class InfeasibleDecomposition(FlatMetricError, ValueError):
    pass


class UnbalancedWasserstein(FlatMetricError, ValueError):
    pass


class NumericalFailure(FlatMetricError, RuntimeError):
    pass


class BadGroupSize(FlatMetricError, ValueError):
    pass


class ZeroMatrix(FlatMetricError, ValueError):
    pass


class DimensionMismatch(FlatMetricError, ValueError):
    pass


class StaleCache(FlatMetricError, RuntimeError):
    pass


class ShapeMismatch(FlatMetricError, ValueError):
    pass


class DivergedTraining(FlatMetricError, RuntimeError):
    pass


class ShortHistory(FlatMetricError, ValueError):
    pass


class BadRatio(FlatMetricError, ValueError):
    pass


class DegenerateCorrection(FlatMetricError, ValueError):
    pass


class FitDiverged(FlatMetricError, RuntimeError):
    pass


class InsufficientDimensions(FlatMetricError, ValueError):
    pass
