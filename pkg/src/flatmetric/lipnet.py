"""1-Lipschitz MLP: spectrally normalized dense layers with GroupSort activations.

Everything is plain numpy: batched forward pass, hand-written reverse mode,
and an Adam optimizer. Each dense layer keeps a persistent power-iteration
state ``(u, v)`` that is warm-started across calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadGroupSize, DimensionMismatch, ShapeMismatch, StaleCache, ZeroMatrix


def group_sort(v, group_size: int = 2) -> np.ndarray:
    """Sort each consecutive block of ``group_size`` entries ascending.

    Works on the last axis, so a batch ``(B, K)`` is sorted row by row.
    """
    out, _ = _group_sort(np.asarray(v, dtype=np.float64), group_size)
    return out


def _group_sort(z: np.ndarray, g: int):
    k = z.shape[-1]
    if g < 1 or k % g:
        raise BadGroupSize(f"width {k} is not divisible by group size {g}")
    if g == 1:
        return z.copy(), None
    blocks = z.reshape(*z.shape[:-1], k // g, g)
    if g == 2:
        a, b = blocks[..., 0], blocks[..., 1]
        swap = a > b  # ties keep their order
        out = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=-1)
        return out.reshape(z.shape), swap
    order = np.argsort(blocks, axis=-1, kind="stable")
    out = np.take_along_axis(blocks, order, axis=-1)
    return out.reshape(z.shape), order


def _group_sort_backward(grad_out: np.ndarray, route, g: int) -> np.ndarray:
    """Send each output slot's gradient back to the slot it was sorted from."""
    if g == 1:
        return grad_out
    k = grad_out.shape[-1]
    blocks = grad_out.reshape(*grad_out.shape[:-1], k // g, g)
    if g == 2:
        lo, hi = blocks[..., 0], blocks[..., 1]
        grad = np.stack([np.where(route, hi, lo), np.where(route, lo, hi)], axis=-1)
        return grad.reshape(grad_out.shape)
    grad = np.zeros_like(blocks)
    np.put_along_axis(grad, route, blocks, axis=-1)
    return grad.reshape(grad_out.shape)


def _unit(x: np.ndarray) -> np.ndarray | None:
    norm = np.linalg.norm(x)
    if norm == 0 or not np.isfinite(norm):
        return None
    return x / norm


@dataclass(eq=False)
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    u: np.ndarray  # (out,) left singular vector estimate
    v: np.ndarray  # (in,) right singular vector estimate
    sigma: float = 1.0

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DenseLayer":
        # orthogonal rows or columns: every singular value equals one
        a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        w = q if n_out >= n_in else q.T
        layer = cls(w.copy(), np.zeros(n_out), _unit(rng.standard_normal(n_out)), np.zeros(n_in))
        layer.reset_spectral_state()
        return layer

    @property
    def shape(self):
        return self.weight.shape

    def reset_spectral_state(self) -> None:
        """Set (u, v, sigma) to the exact leading singular triple of the weight."""
        if not np.any(self.weight):
            raise ZeroMatrix("cannot normalize an all-zero weight matrix")
        left, s, right = np.linalg.svd(self.weight, full_matrices=False)
        self.u, self.v, self.sigma = left[:, 0].copy(), right[0].copy(), float(s[0])

    def power_iterate(self, iters: int) -> float:
        w = self.weight
        if not np.any(w):
            raise ZeroMatrix("cannot normalize an all-zero weight matrix")
        for _ in range(iters):
            v = _unit(w.T @ self.u)
            if v is None:
                # u fell into the left null space; restart from the largest row
                u = np.zeros(w.shape[0])
                u[np.argmax(np.abs(w).sum(axis=1))] = 1.0
                v = _unit(w.T @ u)
            u = _unit(w @ v)
            self.u, self.v = u, v
        self.sigma = float(self.u @ w @ self.v)
        return self.sigma


def spectral_normalize(layer: DenseLayer, power_iters: int = 1) -> np.ndarray:
    """``W / sigma_hat`` with ``sigma_hat`` from warm-started power iteration."""
    sigma = layer.power_iterate(power_iters)
    if not sigma > 0:
        raise ZeroMatrix("power iteration produced a nonpositive singular value")
    return layer.weight / sigma


@dataclass(eq=False)
class LipschitzNet:
    layers: list
    group_size: int = 2
    power_iters: int = 1
    _cache: dict | None = field(default=None, repr=False)
    _version: int = field(default=0, repr=False)

    @classmethod
    def create(
        cls,
        input_dim: int,
        hidden=(64, 64),
        group_size: int = 2,
        seed=None,
        power_iters: int = 1,
    ) -> "LipschitzNet":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for h in hidden:
            if h % group_size:
                raise BadGroupSize(f"hidden width {h} is not divisible by group size {group_size}")
        widths = [input_dim, *hidden, 1]
        layers = [DenseLayer.init(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        return cls(layers, group_size, power_iters)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def set_parameters(self, params) -> None:
        """Assign weights and biases; the spectral state is recomputed exactly."""
        params = list(params)
        if len(params) != 2 * len(self.layers):
            raise ShapeMismatch("wrong number of parameter arrays")
        for k, layer in enumerate(self.layers):
            w = np.array(params[2 * k], dtype=np.float64)
            b = np.array(params[2 * k + 1], dtype=np.float64)
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeMismatch(f"layer {k}: got {w.shape}/{b.shape}")
            layer.weight, layer.bias = w, b
            if np.any(w):
                layer.reset_spectral_state()
        self.touch()

    def touch(self) -> None:
        """Mark parameters as modified; invalidates any cached forward pass."""
        self._version += 1
        self._cache = None

    def forward(self, x, power_iters: int | None = None, update: bool = True) -> np.ndarray:
        """Evaluate the network on a batch ``(B, d)`` (or a single point).

        With ``update=False`` the stored ``(u, v)`` are frozen and
        ``sigma = u^T W v`` is taken from the current weights, which makes the
        output exactly the function that :meth:`backward` differentiates.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input has {x.shape[1]} coordinates, net expects {self.input_dim}")
        iters = self.power_iters if power_iters is None else power_iters
        acts, norm_w, routes = [x], [], []
        h = x
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            if not np.any(layer.weight):
                w_hat = layer.weight  # zero map is trivially 1-Lipschitz
            elif update:
                w_hat = spectral_normalize(layer, iters)
            else:
                layer.sigma = float(layer.u @ layer.weight @ layer.v)
                if not layer.sigma > 0:
                    raise ZeroMatrix("frozen singular vectors give a nonpositive sigma")
                w_hat = layer.weight / layer.sigma
            norm_w.append(w_hat)
            z = h @ w_hat.T + layer.bias
            if k < last:
                h, route = _group_sort(z, self.group_size)
                routes.append(route)
            else:
                h = z
            acts.append(h)
        self._cache = {"acts": acts, "weights": norm_w, "routes": routes, "version": self._version}
        y = h[:, 0]
        return y[0] if single else y

    __call__ = forward

    def backward(self, grad_out) -> list:
        """Gradients of ``sum(grad_out * y)`` w.r.t. every weight and bias.

        ``u`` and ``v`` are held constant, so ``d sigma / dW = u v^T``.
        """
        cache = self._cache
        if cache is None or cache["version"] != self._version:
            raise StaleCache("backward needs a forward pass on the current parameters")
        acts, weights, routes = cache["acts"], cache["weights"], cache["routes"]
        g = np.asarray(grad_out, dtype=np.float64).reshape(-1, 1)
        if g.shape[0] != acts[0].shape[0]:
            raise ShapeMismatch("upstream gradient does not match the batch")
        grads = [None] * (2 * len(self.layers))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if k < len(self.layers) - 1:
                g = _group_sort_backward(g, routes[k], self.group_size)
            grad_what = g.T @ acts[k]
            grads[2 * k + 1] = g.sum(axis=0)
            if np.any(layer.weight):
                s = layer.sigma
                grad_w = grad_what / s - (np.sum(grad_what * layer.weight) / s**2) * np.outer(layer.u, layer.v)
            else:
                grad_w = grad_what
            grads[2 * k] = grad_w
            g = g @ weights[k]
        return grads

    # --- checkpoints ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "flatmetric-lipnet/1",
            "group_size": self.group_size,
            "power_iters": self.power_iters,
            "layers": [
                {
                    "shape": list(layer.shape),
                    "weight": layer.weight.tolist(),
                    "bias": layer.bias.tolist(),
                    "u": layer.u.tolist(),
                    "v": layer.v.tolist(),
                    "sigma": layer.sigma,
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LipschitzNet":
        layers = []
        for spec in data["layers"]:
            shape = tuple(spec["shape"])
            w = np.array(spec["weight"], dtype=np.float64).reshape(shape)
            layers.append(
                DenseLayer(
                    w,
                    np.array(spec["bias"], dtype=np.float64),
                    np.array(spec["u"], dtype=np.float64),
                    np.array(spec["v"], dtype=np.float64),
                    float(spec["sigma"]),
                )
            )
        return cls(layers, int(data["group_size"]), int(data.get("power_iters", 1)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LipschitzNet":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params: list, grads: list, state: AdamState) -> list:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeMismatch("params and grads differ in length")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params
