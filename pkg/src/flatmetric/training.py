"""Loss terms, the adaptive penalty schedule and the full-batch training loop.

The network ``f`` is trained to minimise

    L = L_m + lambda(t) * L_b,
    L_m = -sum_i w_i f(x_i) + sum_j v_j f(y_j)              (mu: x, w; nu: y, v)
    L_b = sum_i w_i h(x_i)^2 / |mu| + sum_j v_j h(y_j)^2 / |nu|,
    h   = max(|f| - M, 0),

and ``-L_m`` averaged over the final epochs estimates the flat distance.

The form of ``L_b`` is a reconstruction: the hinge is applied per sample and
each measure's term is divided by its total mass, which makes ``L_b``
nonnegative, quadratic in the excess and invariant under rescaling both
measures. A max-over-samples hinge is the other plausible reading and is not
implemented.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DivergedTraining, ShortHistory, ZeroMass
from .lipnet import AdamState, LipschitzNet, adam_step
from .measures import MeasurePair

LAMBDA_FLOOR = 1e-3


class Mode(str, Enum):
    FLAT = "flat"
    WASSERSTEIN = "wasserstein"


@dataclass(frozen=True)
class LossBreakdown:
    metric_loss: float
    bound_loss: float
    lam: float

    @property
    def total(self) -> float:
        return self.metric_loss + self.lam * self.bound_loss


@dataclass
class LambdaSchedule:
    """Piecewise-linear penalty weight over the training fraction ``t``.

    ``lambda_init`` until ``s1``; at ``s1`` the target ``-2 L_m`` is recorded
    and approached linearly until ``s2``; at ``s2`` the target
    ``lambda_s1 * L_b / b_target`` is recorded and approached until ``s3``;
    constant afterwards. ``adaptive=False`` keeps ``lambda_init`` throughout.
    """

    lambda_init: float = 10.0
    s1: float = 0.2
    s2: float = 0.5
    s3: float = 0.8
    b_target: float = 0.02
    adaptive: bool = True
    lambda_s1: float | None = None
    lambda_s2: float | None = None

    def __post_init__(self):
        if not 0 < self.s1 < self.s2 < self.s3 < 1:
            raise ValueError("need 0 < s1 < s2 < s3 < 1")
        if not self.lambda_init > 0 or not self.b_target > 0:
            raise ValueError("lambda_init and b_target must be positive")

    def reset(self) -> None:
        self.lambda_s1 = None
        self.lambda_s2 = None

    def __call__(self, t: float, metric_loss: float, bound_loss: float) -> float:
        return lambda_at(self, t, metric_loss, bound_loss)


def lambda_at(schedule: LambdaSchedule, t: float, current_lm: float, current_lb: float) -> float:
    """Penalty weight at training fraction ``t``; records checkpoints lazily."""
    s = schedule
    if not s.adaptive or t < s.s1:
        return s.lambda_init
    if s.lambda_s1 is None:
        target = -2.0 * current_lm
        # a nonpositive distance estimate would switch the penalty off
        s.lambda_s1 = target if target > 0 else s.lambda_init
        s.lambda_s1 = max(s.lambda_s1, LAMBDA_FLOOR)
    if t < s.s2:
        lam = s.lambda_init + (s.lambda_s1 - s.lambda_init) * (t - s.s1) / (s.s2 - s.s1)
        return max(lam, LAMBDA_FLOOR)
    if s.lambda_s2 is None:
        s.lambda_s2 = max(s.lambda_s1 * current_lb / s.b_target, LAMBDA_FLOOR)
    if t < s.s3:
        lam = s.lambda_s1 + (s.lambda_s2 - s.lambda_s1) * (t - s.s2) / (s.s3 - s.s2)
        return max(lam, LAMBDA_FLOOR)
    return s.lambda_s2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10000
    lr: float = 0.01
    lr_decay: float = 0.9
    milestones: tuple = (32, 64)
    lr_scheduler: str = "step"  # "step" | "exponential"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    tail_window: int = 50
    mode: Mode = Mode.FLAT
    seed: int = 0
    hidden: tuple = (64, 64)
    group_size: int = 2
    bound: float = 1.0
    lambda_init: float = 10.0
    adaptive_lambda: bool = True
    power_iters: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.epochs < self.tail_window:
            raise ValueError("epochs must be at least the tail window")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def lr_at(self, epoch: int) -> float:
        if self.lr_scheduler == "exponential":
            return self.lr * self.lr_decay**epoch
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * self.lr_decay**drops

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # plain ``key = value`` files, one field per line
    def dump(self, path) -> None:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, Enum):
                val = val.value
            elif isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name} = {val}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        kw = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = (p.strip() for p in line.partition("="))
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(defaults, key)
            if isinstance(current, bool):
                kw[key] = val.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, tuple):
                kw[key] = tuple(int(v) for v in val.split(",") if v.strip())
            elif isinstance(current, Enum):
                kw[key] = val
            else:
                kw[key] = type(current)(val)
        return cls(**kw)


@dataclass
class TrainingState:
    metric_loss: np.ndarray
    bound_loss: np.ndarray
    lam: np.ndarray
    total: np.ndarray
    schedule: LambdaSchedule
    adam: AdamState = field(repr=False, default=None)

    @property
    def epochs(self) -> int:
        return self.metric_loss.shape[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_m", "L_b", "lambda", "total"])
            for k in range(self.epochs):
                w.writerow(
                    [k, repr(float(self.metric_loss[k])), repr(float(self.bound_loss[k])),
                     repr(float(self.lam[k])), repr(float(self.total[k]))]
                )


def _stack(pair: MeasurePair):
    x = np.vstack([pair.mu.points, pair.nu.points])
    n_mu = pair.mu.size
    return x, n_mu


def metric_loss(net, pair: MeasurePair) -> float:
    """``-int f dmu + int f dnu`` over the support points."""
    f_mu = net(pair.mu.points) if pair.mu.size else np.zeros(0)
    f_nu = net(pair.nu.points) if pair.nu.size else np.zeros(0)
    return float(-(pair.mu.weights @ f_mu) + pair.nu.weights @ f_nu)


def _hinge_sq(values: np.ndarray, bound: float) -> np.ndarray:
    h = np.maximum(np.abs(values) - bound, 0.0)
    return h * h


def bound_loss(net, pair: MeasurePair, bound_m: float = 1.0) -> float:
    """Mass-normalised quadratic hinge on ``|f| > M`` over both supports."""
    tv_mu, tv_nu = pair.mu.total_mass, pair.nu.total_mass
    if tv_mu <= 0 or tv_nu <= 0:
        raise ZeroMass("bound loss needs both measures to carry mass")
    f_mu = net(pair.mu.points)
    f_nu = net(pair.nu.points)
    return float(
        pair.mu.weights @ _hinge_sq(f_mu, bound_m) / tv_mu + pair.nu.weights @ _hinge_sq(f_nu, bound_m) / tv_nu
    )


def train(pair: MeasurePair, cfg: TrainConfig = TrainConfig(), net: LipschitzNet | None = None):
    """Full-batch training; one Adam step per epoch.

    Returns the trained net and a :class:`TrainingState` holding the loss
    history (one entry per epoch, recorded before that epoch's update).
    """
    tv_mu, tv_nu = pair.mu.total_mass, pair.nu.total_mass
    if tv_mu <= 0 or tv_nu <= 0:
        raise ZeroMass("both measures must carry mass")
    if net is None:
        net = LipschitzNet.create(pair.dim, cfg.hidden, cfg.group_size, seed=cfg.seed, power_iters=cfg.power_iters)
    flat = cfg.mode is Mode.FLAT
    x, n_mu = _stack(pair)
    w_metric = np.concatenate([-pair.mu.weights, pair.nu.weights])
    w_bound = np.concatenate([pair.mu.weights / tv_mu, pair.nu.weights / tv_nu])
    schedule = LambdaSchedule(lambda_init=cfg.lambda_init, adaptive=cfg.adaptive_lambda)
    adam = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    hist = np.zeros((4, cfg.epochs))
    params = net.parameters()
    for epoch in range(cfg.epochs):
        f = net.forward(x)
        excess = np.abs(f) - cfg.bound
        h = np.maximum(excess, 0.0)
        lm = float(w_metric @ f)
        lb = float(w_bound @ (h * h))
        if flat:
            # checkpoints read a running mean; single-epoch losses are too noisy
            lo = max(0, epoch - cfg.tail_window + 1)
            lm_avg = (hist[0, lo:epoch].sum() + lm) / (epoch - lo + 1)
            lb_avg = (hist[1, lo:epoch].sum() + lb) / (epoch - lo + 1)
            lam = schedule(epoch / cfg.epochs, lm_avg, lb_avg)
        else:
            lam = 0.0
        total = lm + lam * lb
        if not math.isfinite(total):
            raise DivergedTraining(f"non-finite loss at epoch {epoch}")
        hist[:, epoch] = (lm, lb, lam, total)
        grad_f = w_metric + lam * 2.0 * w_bound * h * np.sign(f)
        grads = net.backward(grad_f)
        adam.lr = cfg.lr_at(epoch)
        adam_step(params, grads, adam)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise DivergedTraining(f"non-finite parameters after epoch {epoch}")
        net.touch()
    state = TrainingState(hist[0], hist[1], hist[2], hist[3], schedule, adam)
    return net, state


def extract_estimate(history, window: int = 50):
    """Mean and standard error of ``-L_m`` over the last ``window`` epochs.

    ``history`` is a :class:`TrainingState` or a sequence of ``L_m`` values.
    """
    lm = history.metric_loss if isinstance(history, TrainingState) else np.asarray(history, dtype=np.float64)
    if window < 2 or lm.shape[0] < window:
        raise ShortHistory(f"need at least {window} epochs (and window >= 2), got {lm.shape[0]}")
    tail = 0.0 - lm[-window:]  # avoids -0.0 when mu == nu
    return float(tail.mean()), float(tail.std(ddof=1) / math.sqrt(window))
