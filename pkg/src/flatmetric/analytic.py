"""Closed-form flat distances for a point mass against a cloud of Diracs.

For ``mu = c * delta_{x0}`` and ``nu = sum_i b_i delta_{x_i}`` with distances
``d_i = |x0 - x_i|`` sorted ascending, the optimal plan transports mass to the
nearest points within distance 2 (up to ``c``) and deletes/creates the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDecomposition
from .measures import DiscreteMeasure

TRANSPORT_THRESHOLD = 2.0
_PREFIX_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiracConfig:
    """``c * delta_0`` versus ``sum_i b_i delta_{x_i}``, stored sorted by distance."""

    c: float
    distances: np.ndarray
    weights: np.ndarray

    def __init__(self, c, distances, weights=None):
        d = np.asarray(distances, dtype=np.float64).reshape(-1)
        b = np.ones_like(d) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
        if b.shape != d.shape:
            raise ValueError("distances and weights must have equal length")
        if not c > 0:
            raise ValueError(f"c must be positive, got {c}")
        if np.any(b <= 0):
            raise ValueError("weights must be strictly positive")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("distances must be finite and nonnegative")
        order = np.argsort(d, kind="stable")
        d, b = d[order].copy(), b[order].copy()
        d.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "c", float(c))
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "weights", b)

    @property
    def n(self) -> int:
        return self.distances.shape[0]

    @classmethod
    def from_measures(cls, point_mass: DiscreteMeasure, cloud: DiscreteMeasure) -> "DiracConfig":
        """Build a config from a single-point measure and an arbitrary cloud.

        Zero-weight cloud points carry no mass and are dropped.
        """
        if point_mass.size != 1:
            raise ValueError("point_mass must be supported on exactly one point")
        keep = cloud.weights > 0
        d = np.linalg.norm(cloud.points[keep] - point_mass.points[0], axis=1)
        return cls(point_mass.total_mass, d, cloud.weights[keep])


@dataclass(frozen=True)
class Decomposition:
    alpha_star: float
    beta_star: np.ndarray
    i_star: int
    value: float


def split_index(cfg: DiracConfig, threshold: float = TRANSPORT_THRESHOLD) -> int:
    """Number of points with distance <= threshold."""
    return int(np.searchsorted(cfg.distances, threshold, side="right"))


def _i_star(cfg: DiracConfig, l: int) -> int:
    prefix = np.cumsum(cfg.weights[:l])
    ok = prefix <= cfg.c * (1.0 + _PREFIX_RTOL)
    # prefix sums are increasing, so the admissible set is an initial segment
    return int(np.count_nonzero(ok))


def flat_distance_dirac(cfg: DiracConfig) -> float:
    d, b, c = cfg.distances, cfg.weights, cfg.c
    l = split_index(cfg)
    i_star = _i_star(cfg, l)
    inside = float(b[:l].sum())
    head = float(b[:i_star].sum())
    value = float(np.dot(b[:i_star], d[:i_star]))
    coeff = min(c, inside) - head
    if coeff > 0 and i_star < cfg.n:
        value += coeff * d[i_star]
    return value + abs(c - inside) + float(b[l:].sum())


def flat_distance_dirac_unit(c: float, distances) -> float:
    """Same as :func:`flat_distance_dirac` with all weights equal to one."""
    d = np.sort(np.asarray(distances, dtype=np.float64).reshape(-1))
    n = d.shape[0]
    l = int(np.searchsorted(d, TRANSPORT_THRESHOLD, side="right"))
    lam = min(c, l)
    k = math.floor(lam)
    value = abs(c - l) + n - l + float(d[:k].sum())
    if lam > k:
        value += (lam - k) * d[k]
    return value


def experiment2_ground_truth(n: int, m: float, l_f: int, distances) -> float:
    """Flat distance of ``m delta_0`` vs ``n`` unit Diracs, both scaled by 1/min(n, m)."""
    d = np.sort(np.asarray(distances, dtype=np.float64).reshape(-1))
    if d.shape[0] != n:
        raise ValueError(f"expected {n} distances, got {d.shape[0]}")
    inside = int(np.searchsorted(d, TRANSPORT_THRESHOLD, side="right"))
    if inside != l_f:
        raise ValueError(f"l_f={l_f} but {inside} distances are <= 2")
    lam = min(l_f, m)
    k = math.floor(lam)
    total = abs(m - l_f) + n - l_f + float(d[:k].sum())
    if lam > k:
        total += (lam - k) * d[k]
    return total / min(n, m)


def optimal_decomposition(cfg: DiracConfig) -> Decomposition:
    """Optimal transported mass ``alpha*`` and its split ``beta*`` over the cloud.

    ``beta*`` is indexed like ``cfg.distances`` (ascending distance).
    """
    l = split_index(cfg)
    i_star = _i_star(cfg, l)
    alpha = min(cfg.c, float(cfg.weights[:l].sum()))
    beta = np.zeros(cfg.n)
    beta[:i_star] = cfg.weights[:i_star]
    rest = alpha - float(beta.sum())
    if rest > 0 and i_star < cfg.n:
        beta[i_star] = rest
    return Decomposition(alpha, beta, i_star, decomposition_cost(cfg, alpha, beta))


def decomposition_cost(cfg: DiracConfig, alpha: float, beta, tol: float = 1e-9) -> float:
    """Transport-plus-creation cost ``c + sum b - 2 alpha + sum beta_i d_i``.

    Any feasible ``(alpha, beta)`` gives an upper bound on the flat distance.
    """
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != cfg.n:
        raise InfeasibleDecomposition(f"beta has length {beta.shape[0]}, expected {cfg.n}")
    if np.any(beta < -tol) or np.any(beta > cfg.weights + tol):
        raise InfeasibleDecomposition("need 0 <= beta_i <= b_i")
    if abs(beta.sum() - alpha) > tol:
        raise InfeasibleDecomposition(f"sum(beta)={beta.sum()} differs from alpha={alpha}")
    if alpha < -tol or alpha > min(cfg.c, cfg.weights.sum()) + tol:
        raise InfeasibleDecomposition("need 0 <= alpha <= min(c, sum b)")
    return float(cfg.c + cfg.weights.sum() - 2.0 * alpha + np.dot(beta, cfg.distances))
