"""Experiment presets, pairwise distance matrices and result tables.

Every cell of an experiment draws its randomness from its own
``SeedSequence`` built from the master seed and the cell coordinates, so the
output does not depend on evaluation order or the number of workers.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..analytic import DiracConfig, experiment2_ground_truth, flat_distance_dirac
from ..calibration import DEFAULT_MODEL, DimensionModel, sphere_truth
from ..estimator import neural_distance
from ..lp_oracle import flat_distance_exact, wasserstein_exact
from ..measures import DiscreteMeasure, image_to_measure, normalize_pair, sample_ball_with_split, sample_sphere
from ..training import Mode, TrainConfig, extract_estimate, train

class Kind(str, Enum):
    EXP1 = "exp1"
    EXP2 = "exp2"
    MATRIX = "matrix"
    IMAGE = "image"
    GAUSSIAN = "gaussian"
    SWEEP = "sweep"


_KIND_ID = {k: i for i, k in enumerate(Kind)}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: Kind
    dims: tuple = (2,)
    ratios: tuple = (1.0,)
    radii: tuple = (0.5, 1.0, 2.0, 5.0)
    lf_fractions: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    repetitions: int = 1
    seed: int = 0
    n_points: int = 60  # experiment 2 support size
    mass_base: int = 30  # experiment 1: m = mass_base * 2^d
    outer_radius: float = 20.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=2000))
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")

    def cell_seed(self, *coords) -> np.random.SeedSequence:
        return np.random.SeedSequence([int(self.seed) & 0xFFFFFFFF, _KIND_ID[self.kind], *coords])


def desk_spec(kind, **overrides) -> ExperimentSpec:
    """Small presets: 2000 epochs and 5 repetitions, a few minutes on one core."""
    kind = Kind(kind)
    base = {
        Kind.EXP1: dict(dims=(1, 2), ratios=(1.0,), radii=(0.1, 0.5, 1.0, 1.5, 2.0, 3.0, 8.0, 28.0), repetitions=5),
        Kind.EXP2: dict(dims=(2,), ratios=(0.5, 1.0, 2.0, 5.0, 10.0, 16.0), repetitions=5),
        Kind.SWEEP: dict(dims=(4,), ratios=(1.0,), radii=(5.0,), repetitions=5),
    }.get(kind, {})
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(kind, **base)


def full_spec(kind, **overrides) -> ExperimentSpec:
    """Full-scale presets: 10000 epochs, 50 repetitions for experiment 2, 128-wide layers for experiment 1."""
    kind = Kind(kind)
    r0_grid = tuple(np.round(np.arange(0.01, 3.0, 0.1), 2)) + (8.0, 13.0, 18.0, 23.0, 28.0)
    base = {
        Kind.EXP1: dict(dims=(1, 2, 5, 10), ratios=(1.0,), radii=r0_grid, train=TrainConfig(hidden=(128, 128))),
        Kind.EXP2: dict(
            dims=(2,), ratios=(0.5, 1.0, 2.0, 5.0, 10.0, 16.0), repetitions=50, n_points=100, outer_radius=200.0,
            train=TrainConfig(),
        ),
        Kind.SWEEP: dict(dims=(4,), ratios=(1.0,), radii=(5.0,), train=TrainConfig()),
    }.get(kind, dict(train=TrainConfig()))
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(kind, **base)


# --- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class Trial:
    """One trained network on one sampled problem."""

    key: tuple
    rho_true: float | None
    rho_raw: float
    rho_corrected: float
    sem: float


@dataclass
class DistanceReport:
    key_names: tuple
    trials: list

    def cells(self) -> list:
        """Per-cell aggregates over repetitions, in first-seen order."""
        groups = {}
        for t in self.trials:
            groups.setdefault(t.key, []).append(t)
        out = []
        for key, ts in groups.items():
            raw = np.array([t.rho_raw for t in ts])
            cor = np.array([t.rho_corrected for t in ts])
            row = {name: v for name, v in zip(self.key_names, key)}
            row.update(n=len(ts), rho_raw=float(raw.mean()), rho_corrected=float(cor.mean()),
                       sem=float(np.mean([t.sem for t in ts])))
            if ts[0].rho_true is not None:
                truth = np.array([t.rho_true for t in ts])
                rc, rr = cor / truth - 1.0, raw / truth - 1.0
                row.update(
                    rho_true=float(truth.mean()),
                    rel_err_mean=float(rc.mean()), rel_err_std=float(rc.std(ddof=1)) if len(ts) > 1 else 0.0,
                    raw_rel_err_mean=float(rr.mean()), raw_rel_err_std=float(rr.std(ddof=1)) if len(ts) > 1 else 0.0,
                )
            out.append(row)
        return out

    def rel_errors(self, corrected: bool = True) -> np.ndarray:
        vals = [(t.rho_corrected if corrected else t.rho_raw) / t.rho_true - 1.0 for t in self.trials if t.rho_true]
        return np.array(vals)

    def mean_abs_rel_err(self, corrected: bool = True) -> float:
        return float(np.mean(np.abs(self.rel_errors(corrected))))

    def to_csv(self) -> str:
        cells = self.cells()
        cols = list(self.key_names) + ["n", "rho_true", "rho_raw", "rho_corrected", "sem",
                                       "rel_err_mean", "rel_err_std", "raw_rel_err_mean", "raw_rel_err_std"]
        if cells and "rho_true" not in cells[0]:
            cols = [c for c in cols if c in cells[0]]
        return _csv(cols, [[_fmt(c.get(k, "")) for k in cols] for c in cells])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _net_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


# --- experiment 1: Dirac vs sphere ------------------------------------------


def _exp1_trial(job):
    key, d, x, r0, m, seq, cfg, model = job
    n = max(1, int(round(m * x)))
    s_sample, s_net = seq.spawn(2)
    mu = DiscreteMeasure.dirac(np.zeros(d), float(m))
    nu = sample_sphere(n, d, r0, seed=np.random.default_rng(s_sample))
    est = neural_distance(mu, nu, cfg.with_overrides(seed=_net_seed(s_net)), model, mass_ratio=n / m)
    scale = 1.0 / min(n, m)
    return Trial(key, sphere_truth(m, n, r0), est.raw * scale, est.corrected * scale, est.sem * scale)


def run_experiment1(spec: ExperimentSpec, model: DimensionModel | None = DEFAULT_MODEL) -> DistanceReport:
    """``m 2^d delta_0`` against unit Diracs on spheres; distances in normalised units."""
    jobs = []
    for i, d in enumerate(spec.dims):
        m = spec.mass_base * 2**d
        for j, x in enumerate(spec.ratios):
            for k, r0 in enumerate(spec.radii):
                for rep in range(spec.repetitions):
                    key = (int(d), float(x), float(r0))
                    jobs.append((key, int(d), float(x), float(r0), m, spec.cell_seed(i, j, k, rep), spec.train, model))
    return DistanceReport(("dim", "ratio", "radius"), _map(_exp1_trial, jobs, spec.workers))


# --- experiment 2: Dirac vs ball with a prescribed inner share ---------------


def _exp2_trial(job):
    key, d, lf, x, n, R, seq, cfg, model = job
    m = n / x
    l = int(round(lf * n))
    s_sample, s_net = seq.spawn(2)
    nu = sample_ball_with_split(n, l, d, outer_radius=R, seed=np.random.default_rng(s_sample))
    mu = DiscreteMeasure.dirac(np.zeros(d), m)
    truth = experiment2_ground_truth(n, m, l, np.linalg.norm(nu.points, axis=1))
    est = neural_distance(mu, nu, cfg.with_overrides(seed=_net_seed(s_net)), model, mass_ratio=x)
    scale = 1.0 / min(n, m)
    return Trial(key, truth, est.raw * scale, est.corrected * scale, est.sem * scale)


def run_experiment2(spec: ExperimentSpec, model: DimensionModel | None = DEFAULT_MODEL) -> DistanceReport:
    """``(n/x) delta_0`` against ``n`` Diracs, a share ``l_f`` of them within radius 2."""
    jobs = []
    for i, d in enumerate(spec.dims):
        for a, lf in enumerate(spec.lf_fractions):
            for b, x in enumerate(spec.ratios):
                for rep in range(spec.repetitions):
                    key = (int(d), float(lf), float(x))
                    jobs.append((key, int(d), float(lf), float(x), spec.n_points, spec.outer_radius,
                                 spec.cell_seed(i, a, b, rep), spec.train, model))
    return DistanceReport(("dim", "l_f", "ratio"), _map(_exp2_trial, jobs, spec.workers))


# --- pairwise matrices --------------------------------------------------------


class Engine(str, Enum):
    NEURAL = "neural"
    LP = "lp"


def _pair_distance(job):
    a, b, mode, engine, cfg, model, normalized = job
    if mode is Mode.WASSERSTEIN:
        a, b = a.scaled(1.0 / a.total_mass), b.scaled(1.0 / b.total_mass)
    elif normalized:
        pair = normalize_pair(a, b)
        a, b = pair.mu, pair.nu
    if engine is Engine.LP:
        return flat_distance_exact(a, b) if mode is Mode.FLAT else wasserstein_exact(a, b)
    est = neural_distance(a, b, cfg.with_overrides(mode=mode), model)
    return est.corrected


def pairwise_matrix(
    measures,
    mode=Mode.FLAT,
    engine=Engine.NEURAL,
    cfg: TrainConfig | None = None,
    model: DimensionModel | None = DEFAULT_MODEL,
    seed: int = 0,
    workers: int = 1,
    normalized: bool = False,
) -> np.ndarray:
    """Symmetric distance matrix; the upper triangle is computed and mirrored.

    The diagonal also goes through the engine. In Wasserstein mode every
    measure is first scaled to unit mass. With ``normalized=True`` each flat
    distance is reported for the pair scaled by ``1/min(mass)``, i.e. divided
    by the smaller mass; such a matrix is no longer a metric.
    """
    measures = list(measures)
    mode, engine = Mode(mode), Engine(engine)
    if len(measures) < 2:
        raise ValueError("need at least two measures")
    if len({m.dim for m in measures}) != 1:
        raise ValueError("all measures must share a dimension")
    cfg = cfg or TrainConfig(epochs=2000)
    root = np.random.SeedSequence(int(seed) & 0xFFFFFFFF)
    k = len(measures)
    jobs, index = [], []
    for i in range(k):
        for j in range(i, k):
            s = _net_seed(np.random.SeedSequence(root.entropy, spawn_key=(i, j)))
            jobs.append((measures[i], measures[j], mode, engine, cfg.with_overrides(seed=s), model, normalized))
            index.append((i, j))
    values = _map(_pair_distance, jobs, workers)
    out = np.zeros((k, k))
    for (i, j), v in zip(index, values):
        out[i, j] = out[j, i] = v
    return out


def matrix_to_csv(matrix: np.ndarray, names) -> str:
    return _csv([""] + list(names), [[n] + [repr(float(v)) for v in row] for n, row in zip(names, matrix)])


def nearest_assignment(matrix: np.ndarray, rows, cols) -> list:
    """For each row index, the column index with the smallest distance.

    Returns ``(row, col, tied)`` triples; ties go to the lowest column index
    and are flagged.
    """
    out = []
    for r in rows:
        vals = np.array([matrix[r, c] for c in cols])
        best = int(np.argmin(vals))
        tied = int(np.count_nonzero(vals == vals[best])) > 1
        out.append((r, cols[best], tied))
    return out


# --- Gaussian clusters ------------------------------------------------------

DOMAIN_SIGMA = 0.3
DOMAIN_CLASSES = {
    # name: (mean, covariance / sigma, sample count)
    "A": ((1.0, 5.0), ((1.0, 0.0), (0.0, 1.0)), 50),
    "B": ((5.0, 3.5), ((1.0, 0.0), (0.0, 1.0)), 50),
    "C": ((3.0, 1.0), ((5.0, 0.0), (0.0, 1.0)), 150),
    "X": ((2.0, 5.0), ((1.0, 0.5), (0.5, 1.0)), 38),
    "Y": ((5.0, 3.5), ((1.5, 1.0), (1.0, 1.5)), 42),
    "Z": ((6.5, 1.0), ((2.0, 0.0), (0.0, 2.0)), 113),
}


def gaussian_cluster(mean, cov, n: int, seed) -> DiscreteMeasure:
    rng = np.random.default_rng(seed)
    return DiscreteMeasure(rng.multivariate_normal(mean, cov, size=n), np.ones(n))


def domain_adaptation_preset(seed: int = 0) -> dict:
    """Source classes A, B, C and target classes X, Y, Z; one unit of mass per sample."""
    out = {}
    for i, (name, (mean, cov, n)) in enumerate(DOMAIN_CLASSES.items()):
        seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _KIND_ID[Kind.GAUSSIAN], i])
        out[name] = gaussian_cluster(mean, DOMAIN_SIGMA * np.asarray(cov), n, seq)
    return out


def domain_adaptation(seed: int = 0, engine=Engine.NEURAL, cfg: TrainConfig | None = None, workers: int = 1):
    """Distance matrix over the six classes and the target-to-source matching.

    Distances are compared in normalised units (each pair divided by its
    smaller mass), so a large class is not penalised for its size alone.
    """
    classes = domain_adaptation_preset(seed)
    names = list(classes)
    mat = pairwise_matrix(list(classes.values()), Mode.FLAT, engine, cfg, seed=seed, workers=workers, normalized=True)
    src = [names.index(n) for n in "ABC"]
    matches = nearest_assignment(mat, [names.index(n) for n in "XYZ"], src)
    return names, mat, [(names[r], names[c], tied) for r, c, tied in matches]


# --- image benchmark ----------------------------------------------------------

IMAGE_CLASSES = ("shapes", "cauchy", "grf")


def synthetic_image(kind: str, size: int, seed) -> np.ndarray:
    """8-bit grayscale test images in the spirit of the usual OT benchmark classes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    if kind == "shapes":
        img = np.zeros((size, size))
        for _ in range(3):
            cx, cy, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.2)
            if rng.random() < 0.5:
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            else:
                mask = (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
            img[mask] = rng.uniform(120, 255)
    elif kind == "cauchy":
        img = np.zeros((size, size))
        for _ in range(rng.integers(1, 4)):
            cx, cy, g = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.2)
            img += 1.0 / (1.0 + ((xx - cx) ** 2 + (yy - cy) ** 2) / (g * g))
        img *= 255.0 / img.max()
    elif kind == "grf":
        # white noise smoothed in Fourier space, then stretched to [0, 255]
        k = np.fft.fftfreq(size)
        kk = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
        field_ = np.real(np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * np.exp(-((kk / 0.15) ** 2))))
        img = (field_ - field_.min()) / (np.ptp(field_) or 1.0) * 255.0
    else:
        raise ValueError(f"unknown image class {kind!r}")
    return np.clip(np.round(img), 0, 255)


def image_truth(image_measure: DiscreteMeasure, c: float) -> float:
    """Exact distance between an image measure and ``c delta_(0,0)``."""
    if image_measure.size == 0:
        return float(c)
    cfg = DiracConfig.from_measures(DiscreteMeasure.dirac([0.0, 0.0], c), image_measure)
    return flat_distance_dirac(cfg)


def _image_trial(job):
    key, grid, c, cfg, model = job
    mu = image_to_measure(grid)
    truth = image_truth(mu, c)
    if mu.size == 0:
        return Trial(key, truth, truth, truth, 0.0)
    est = neural_distance(mu, DiscreteMeasure.dirac([0.0, 0.0], c), cfg, model)
    return Trial(key, truth, est.raw, est.corrected, est.sem)


def image_benchmark(images, pixel_masses=(100.0, 1000.0), cfg=None, model=DEFAULT_MODEL, seed=0, workers=1):
    """``images`` maps a class name to a list of grids. Returns a report and per-class median residuals."""
    cfg = cfg or TrainConfig(epochs=2000)
    jobs = []
    for ci, (cls, grids) in enumerate(images.items()):
        for gi, grid in enumerate(grids):
            for pi, c in enumerate(pixel_masses):
                s = _net_seed(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _KIND_ID[Kind.IMAGE], ci, gi, pi]))
                jobs.append(((cls, gi, float(c)), np.asarray(grid), float(c), cfg.with_overrides(seed=s), model))
    report = DistanceReport(("class", "image", "pixel_mass"), _map(_image_trial, jobs, workers))
    medians = {}
    for cls in images:
        res = [abs(t.rho_true - t.rho_corrected) / t.rho_true for t in report.trials if t.key[0] == cls]
        medians[cls] = float(np.median(res))
    return report, medians


def desk_images(size: int = 16, per_class: int = 2, seed: int = 0) -> dict:
    out = {}
    for ci, cls in enumerate(IMAGE_CLASSES):
        out[cls] = [synthetic_image(cls, size, np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 99, ci, k]))
                    for k in range(per_class)]
    return out


# --- optimizer hyperparameter sweep ----------------------------------------

SWEEP_GRID = (
    ("lr", (1e-1, 1e-2, 1e-3, 1e-4)),
    ("lr_decay_32_64", (0.9, 0.8, 0.7)),
    ("lr_decay_200_400", (0.9, 0.8, 0.7)),
    ("lr_decay_1000_2000", (0.9, 0.8, 0.7)),
    ("lr_decay_exponential", (0.95, 0.9, 0.85, 0.8)),
    ("beta1", (0.95, 0.9, 0.85, 0.8)),
    ("weight_decay", (0.0, 0.01, 0.05, 0.1)),
)


def _sweep_cfg(base: TrainConfig, feature: str, value: float) -> TrainConfig:
    if feature == "lr":
        return replace(base, lr=value)
    if feature.startswith("lr_decay_") and feature != "lr_decay_exponential":
        lo, hi = (int(v) for v in feature.split("_")[2:])
        return replace(base, lr_decay=value, milestones=(lo, hi))
    if feature == "lr_decay_exponential":
        return replace(base, lr_decay=value, lr_scheduler="exponential")
    if feature == "beta1":
        return replace(base, beta1=value)
    if feature == "weight_decay":
        return replace(base, weight_decay=value)
    raise ValueError(f"unknown sweep feature {feature!r}")


def _sweep_trial(job):
    key, d, r0, n, seq, cfg = job
    s_sample, s_net = seq.spawn(2)
    mu = DiscreteMeasure.dirac(np.zeros(d), float(n))
    nu = sample_sphere(n, d, r0, seed=np.random.default_rng(s_sample))
    pair = normalize_pair(mu, nu)
    _, state = train(pair, cfg.with_overrides(seed=_net_seed(s_net)))
    rho, sem = extract_estimate(state, cfg.tail_window)
    truth = sphere_truth(n, n, r0)
    return Trial(key, truth, rho, rho, sem)


def hyperparameter_sweep(spec: ExperimentSpec, grid=SWEEP_GRID) -> DistanceReport:
    """Raw relative errors at ``d=4``, ``r=5``, equal masses, one feature varied at a time.

    The same sample and network seed are used for every setting within a
    repetition, so differences come from the optimizer alone.
    """
    d = spec.dims[0]
    r0 = spec.radii[0]
    n = 2**d
    jobs = []
    for feature, values in grid:
        for value in values:
            for rep in range(spec.repetitions):
                jobs.append(((feature, float(value)), d, r0, n, spec.cell_seed(rep), _sweep_cfg(spec.train, feature, value)))
    return DistanceReport(("feature", "value"), _map(_sweep_trial, jobs, spec.workers))
