"""End-to-end neural distance estimate between two measures."""

from __future__ import annotations

from dataclasses import dataclass

from .calibration import DEFAULT_MODEL, MAX_DIM, MIN_DIM, DimensionModel, correct, expected_relative_error, symmetric_ratio
from .measures import DiscreteMeasure, normalize_pair
from .training import Mode, TrainConfig, extract_estimate, train


@dataclass(frozen=True)
class NeuralEstimate:
    raw: float
    corrected: float
    sem: float
    mass_ratio: float
    x_hat: float
    final_bound_loss: float


def neural_distance(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cfg: TrainConfig | None = None,
    model: DimensionModel | None = DEFAULT_MODEL,
    mass_ratio: float | None = None,
) -> NeuralEstimate:
    """Train a Lipschitz net on the pair and read off the distance.

    Both measures are scaled by ``1/min(mass)`` for training and the result
    is scaled back. In flat mode the raw value is divided by
    ``1 + x_hat`` from ``model``; pass ``model=None`` to skip that.
    ``mass_ratio`` defaults to ``max(mass) / min(mass)``. Dimensions outside
    the model's range use the nearest end of the range.
    """
    cfg = cfg or TrainConfig(epochs=2000)
    pair = normalize_pair(mu, nu)
    _, state = train(pair, cfg)
    rho, sem = extract_estimate(state, cfg.tail_window)
    rho, sem = rho / pair.scale, sem / pair.scale
    ratio = symmetric_ratio(mu.total_mass, nu.total_mass) if mass_ratio is None else float(mass_ratio)
    x_hat = 0.0
    if model is not None and cfg.mode is Mode.FLAT:
        dim = min(max(pair.dim, MIN_DIM), MAX_DIM)
        x_hat = expected_relative_error(model, dim, ratio)
    return NeuralEstimate(
        raw=rho,
        corrected=correct(rho, x_hat),
        sem=sem,
        mass_ratio=ratio,
        x_hat=x_hat,
        final_bound_loss=float(state.bound_loss[-1]),
    )
