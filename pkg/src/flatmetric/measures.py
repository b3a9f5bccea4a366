"""Discrete nonnegative measures: construction, scaling, sampling and I/O.

A measure is a weighted point cloud ``sum_i w_i delta_{x_i}`` in R^d. Weights
are nonnegative and the total mass is arbitrary, which is the whole point of
the flat metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidRadius,
    InvalidSplit,
    NegativeIntensity,
    ZeroMass,
)

# Upper edges of the nine intensity bins for 8-bit images. Bin k (0-based)
# covers (EDGES[k-1], EDGES[k]]; a pixel in bin k is repeated k times.
INTENSITY_EDGES = (0, 28, 57, 85, 113, 142, 170, 198, 227, 255)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud. Arrays are copied and frozen on construction."""

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None, dim: int | None = None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            # flat input is a list of 1-D points, or of `dim`-tuples laid end to end
            pts = pts.reshape(-1, dim or 1)
        if pts.ndim != 2:
            raise DimensionMismatch(f"points must be a 2-D array, got shape {pts.shape}")
        if dim is not None and pts.shape[1] != dim:
            if pts.size == 0:
                pts = pts.reshape(0, dim)
            else:
                raise DimensionMismatch(f"points have {pts.shape[1]} coordinates, expected {dim}")
        if pts.shape[1] < 1:
            raise DimensionMismatch("dim must be positive")
        if weights is None:
            w = np.ones(pts.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise DimensionMismatch(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise ValueError("points and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        pts = pts.copy()
        w = w.copy()
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * factor)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.size}, dim={self.dim}, mass={self.total_mass:g})"

    @classmethod
    def dirac(cls, point, mass: float = 1.0) -> "DiscreteMeasure":
        p = np.atleast_1d(np.asarray(point, dtype=np.float64))
        return cls(p.reshape(1, -1), [mass])

    @classmethod
    def empty(cls, dim: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)


@dataclass(frozen=True)
class MeasurePair:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    scale: float = 1.0

    def __post_init__(self):
        if self.mu.dim != self.nu.dim:
            raise DimensionMismatch(f"mu has dim {self.mu.dim}, nu has dim {self.nu.dim}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def dim(self) -> int:
        return self.mu.dim

    @property
    def mass_ratio(self) -> float:
        """mass(nu) / mass(mu)."""
        return self.nu.total_mass / self.mu.total_mass


def total_variation(m: DiscreteMeasure) -> float:
    # TV of a nonnegative measure is its mass
    return m.total_mass


def normalize_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> MeasurePair:
    """Scale both measures by ``1 / min(mass(mu), mass(nu))``.

    The flat metric is positively homogeneous, so distances computed on the
    returned pair are divided by ``pair.scale`` to get back to the input units.
    """
    m_mu, m_nu = mu.total_mass, nu.total_mass
    if m_mu <= 0 or m_nu <= 0:
        raise ZeroMass(f"both masses must be positive, got ({m_mu}, {m_nu})")
    scale = 1.0 / min(m_mu, m_nu)
    if scale == 1.0:
        return MeasurePair(mu, nu, 1.0)
    return MeasurePair(mu.scaled(scale), nu.scaled(scale), scale)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_sphere(n: int, dim: int, radius: float, seed=None) -> DiscreteMeasure:
    """``n`` unit-mass points drawn uniformly on the sphere of radius ``radius``."""
    if radius <= 0:
        raise InvalidRadius(f"radius must be positive, got {radius}")
    if n < 1 or dim < 1:
        raise ValueError("need n >= 1 and dim >= 1")
    rng = _rng(seed)
    g = rng.standard_normal((n, dim))
    norms = np.linalg.norm(g, axis=1)
    # a zero Gaussian draw has probability zero, but resample rather than divide by it
    while np.any(norms == 0):
        bad = norms == 0
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(g, axis=1)
    pts = g / norms[:, None] * radius
    return DiscreteMeasure(pts, np.ones(n))


def _directions(rng, n, dim):
    g = rng.standard_normal((n, dim))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0] = 1.0
    return g / norms[:, None]


def sample_ball_with_split(
    n: int,
    l_f: int,
    dim: int,
    outer_radius: float = 200.0,
    inner_radius: float = 2.0,
    seed=None,
) -> DiscreteMeasure:
    """Uniform points in a ball, exactly ``l_f`` of them in the closed inner ball.

    The first ``l_f`` points satisfy ``|x| <= inner_radius``, the remaining
    ``n - l_f`` satisfy ``inner_radius < |x| <= outer_radius``. Radii are drawn
    by inverting the radial CDF ``r^d`` restricted to each region.
    """
    if not 0 <= l_f <= n:
        raise InvalidSplit(f"need 0 <= l_f <= n, got l_f={l_f}, n={n}")
    if not 0 < inner_radius < outer_radius:
        raise InvalidRadius("need 0 < inner_radius < outer_radius")
    rng = _rng(seed)
    inner_u = rng.random(l_f)
    outer_u = 1.0 - rng.random(n - l_f)  # in (0, 1]
    r_in = inner_radius * inner_u ** (1.0 / dim)
    lo, hi = inner_radius**dim, outer_radius**dim
    r_out = (lo + outer_u * (hi - lo)) ** (1.0 / dim)
    # guard against rounding back onto the inner sphere
    r_out = np.maximum(r_out, np.nextafter(inner_radius, np.inf))
    r_out = np.minimum(r_out, outer_radius)
    radii = np.concatenate([r_in, r_out])
    pts = _directions(rng, n, dim) * radii[:, None]
    return DiscreteMeasure(pts, np.ones(n), dim=dim)


def intensity_bin(value: float, intensity_max: float = 255) -> int:
    """Repetition count of a pixel: 0 for black (<= 28 on the 8-bit scale), up to 8."""
    edges = np.asarray(INTENSITY_EDGES, dtype=np.float64) * (intensity_max / 255.0)
    return int(np.searchsorted(edges, value, side="left")) - 1 if value > 0 else 0


def image_to_measure(grid, intensity_max: float = 255) -> DiscreteMeasure:
    """Turn a grayscale image into a measure on [0, 1]^2.

    Pixel (row i, col j) of an R x C image sits at ``((j + .5)/C, (i + .5)/R)``
    and carries its bin number as weight; black pixels are dropped.
    """
    img = np.asarray(grid, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be a 2-D matrix")
    if np.any(img < 0):
        raise NegativeIntensity("intensities must be nonnegative")
    if np.any(img > intensity_max):
        raise ValueError(f"intensities must not exceed {intensity_max}")
    edges = np.asarray(INTENSITY_EDGES, dtype=np.float64) * (intensity_max / 255.0)
    # side="left" puts a value equal to an edge into the bin that edge closes
    bins = np.searchsorted(edges, img, side="left") - 1
    bins[img <= 0] = 0
    rows, cols = img.shape
    i, j = np.nonzero(bins > 0)
    pts = np.column_stack([(j + 0.5) / cols, (i + 0.5) / rows])
    return DiscreteMeasure(pts, bins[i, j].astype(np.float64), dim=2)


# --- file formats -----------------------------------------------------------


def read_point_cloud(path, weighted: bool | None = None) -> DiscreteMeasure:
    """Read a CSV point cloud: d coordinate columns, optionally a weight column.

    A header row is optional. When ``weighted`` is None the last column is a
    weight column only if the header names it ``weight`` (or ``w``/``mass``).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty point cloud")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = [c.strip().lower() for c in rows[0]], rows[1:]
    if weighted is None:
        weighted = header is not None and header[-1] in ("weight", "w", "mass")
    data = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    if data.size == 0:
        ncols = len(header) if header else 1
        data = data.reshape(0, ncols)
    if weighted:
        if data.shape[1] < 2:
            raise ValueError(f"{path}: weighted cloud needs at least 2 columns")
        return DiscreteMeasure(data[:, :-1], data[:, -1])
    return DiscreteMeasure(data, np.ones(data.shape[0]))


def write_point_cloud(path, m: DiscreteMeasure) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(m.dim)] + ["weight"])
        for p, wt in zip(m.points, m.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])


def read_image(path) -> np.ndarray:
    """Read a PGM (P2/P5) or a whitespace-separated integer matrix."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im, dtype=np.float64)
    rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
