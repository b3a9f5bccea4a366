"""Flat metric (bounded Lipschitz distance) between nonnegative discrete measures.

Three ways to compute it: a closed form for a point mass against a cloud of
Diracs (:mod:`flatmetric.analytic`), an exact linear program for arbitrary
finite measures (:mod:`flatmetric.lp_oracle`), and a calibrated estimate from a
trained 1-Lipschitz network (:mod:`flatmetric.estimator`).
"""

from .analytic import DiracConfig, flat_distance_dirac, flat_distance_dirac_unit
from .calibration import DEFAULT_MODEL, DimensionModel, correct, expected_relative_error
from .estimator import NeuralEstimate, neural_distance
from .lp_oracle import flat_distance_exact, wasserstein_exact
from .measures import DiscreteMeasure, MeasurePair, normalize_pair
from .training import Mode, TrainConfig, train

__all__ = [
    "DEFAULT_MODEL",
    "DimensionModel",
    "DiracConfig",
    "DiscreteMeasure",
    "MeasurePair",
    "Mode",
    "NeuralEstimate",
    "TrainConfig",
    "correct",
    "expected_relative_error",
    "flat_distance_dirac",
    "flat_distance_dirac_unit",
    "flat_distance_exact",
    "neural_distance",
    "normalize_pair",
    "train",
    "wasserstein_exact",
]

__version__ = "0.1.0"
