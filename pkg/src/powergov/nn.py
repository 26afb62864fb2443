"""Small tanh MLPs with hand-written backprop, a diagonal Gaussian head and Adam."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ShapeMismatch, StaleCache

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


class Mlp:
    """input -> tanh hidden layers -> linear output.

    Weights are stored as ``(fan_in, fan_out)`` so a batch ``x`` of shape
    ``(n, fan_in)`` maps through ``x @ W + b``.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], dtype=np.float64):
        if len(weights) != len(biases) or not weights:
            raise ShapeMismatch("need one bias per weight matrix")
        self.dtype = np.dtype(dtype)
        self.weights = [np.array(w, dtype=self.dtype, order="C") for w in weights]
        self.biases = [np.array(b, dtype=self.dtype, order="C") for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape}, bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeMismatch(f"layer {i} fan_in {w.shape[0]} != previous fan_out {self.weights[i - 1].shape[1]}")
        self.version = 0
        self._cache = None

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, out_gain: float = 1.0,
             hidden_gain: float = 1.0, dtype=np.float64) -> Mlp:
        """Orthogonal init; zero biases."""
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else hidden_gain
            a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            w = q if fan_in >= fan_out else q.T
            weights.append(gain * w[:fan_in, :fan_out])
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, dtype=dtype)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], dtype=self.dtype)

    def load_from(self, other: Mlp) -> None:
        for dst, src in zip(self.params, other.params):
            if dst.shape != src.shape:
                raise ShapeMismatch(f"{dst.shape} vs {src.shape}")
            dst[...] = src
        self.touch()

    def touch(self) -> None:
        """Mark parameters as changed; invalidates any cached forward pass."""
        self.version += 1

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.weights[0].shape[0]:
            raise ShapeMismatch(f"input dim {x.shape[-1]} != {self.weights[0].shape[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w
            h += b
            if i < last:
                np.tanh(h, out=h)
                acts.append(h)
        if cache:
            self._cache = (self.version, acts, single)
        return h[0] if single else h

    __call__ = forward

    def backward(self, upstream: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(output * upstream)`` for every parameter, in ``params`` order."""
        if self._cache is None:
            raise StaleCache("backward() before forward()")
        version, acts, single = self._cache
        if version != self.version:
            raise StaleCache("parameters changed since the cached forward pass")
        g = np.asarray(upstream, dtype=self.dtype)
        if single:
            g = g[None, :]
        if g.shape != (acts[0].shape[0], self.weights[-1].shape[1]):
            raise ShapeMismatch(f"upstream {g.shape} does not match output")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a = acts[i]
            grads[2 * i] = a.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                d = a * a
                np.subtract(1.0, d, out=d)
                g = g @ self.weights[i].T
                g *= d
        return grads

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.W{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str, dtype=np.float64) -> Mlp:
        ws, bs = [], []
        i = 0
        while f"{prefix}.W{i}" in arrays:
            ws.append(arrays[f"{prefix}.W{i}"])
            bs.append(arrays[f"{prefix}.b{i}"])
            i += 1
        return cls(ws, bs, dtype=dtype)


def forward(params: Mlp, x: np.ndarray) -> np.ndarray:
    return params.forward(x)


def backward(params: Mlp, x: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
    params.forward(x)
    return params.backward(upstream)


# ------------------------------------------------------------ Gaussian head

def gaussian_log_prob(mu, log_std, a) -> np.ndarray | float:
    """Log density of ``a`` under N(mu, diag(exp(log_std))^2), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    z = (a - mu) * np.exp(-log_std)
    lp = np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)
    return float(lp) if np.ndim(lp) == 0 else lp


def sample_action(mu, log_std, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mu = np.asarray(mu, dtype=np.float64)
    z = rng.standard_normal(mu.shape)
    a = mu + np.exp(np.asarray(log_std, dtype=np.float64)) * z
    return a, gaussian_log_prob(mu, log_std, a)


def gaussian_log_prob_grads(mu, log_std, a):
    """d log_prob / d mu (per row) and d log_prob / d log_std (per row)."""
    inv_std = np.exp(-np.asarray(log_std, dtype=np.float64))
    z = (np.asarray(a) - mu) * inv_std
    return z * inv_std, z * z - 1.0


def clamp_log_std(log_std: np.ndarray) -> None:
    np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX, out=log_std)


# ------------------------------------------------------------------ Adam

class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        self.v = [np.zeros_like(p, dtype=np.float64) for p in params]
        self.t = 0

    def update(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> Sequence[np.ndarray]:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ShapeMismatch(f"expected {len(self.m)} arrays, got {len(params)} params / {len(grads)} grads")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or np.shape(g) != m.shape:
                raise ShapeMismatch(f"param {p.shape}, grad {np.shape(g)}, state {m.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            step = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= step.astype(p.dtype, copy=False)
        return params

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_arrays(self, arrays: dict, prefix: str) -> None:
        self.t = int(arrays[f"{prefix}.t"])
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"{prefix}.m{i}"]
            self.v[i][...] = arrays[f"{prefix}.v{i}"]


def adam_update(params, grads, lr: float, state: Adam | None = None):
    """Functional wrapper: one Adam step. Returns ``(params, state)``."""
    if state is None:
        state = Adam(params, lr)
    state.lr = lr
    state.update(params, grads)
    return params, state


# --------------------------------------------------------- gradient check

def numerical_grads(net: Mlp, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``sum(net(x) * upstream)`` for every parameter."""
    upstream = np.asarray(upstream, dtype=np.float64)
    out = []
    for p in net.params:
        g = np.zeros(p.shape)
        flat = p.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(np.sum(net.forward(x, cache=False) * upstream))
            flat[j] = orig - h
            fm = float(np.sum(net.forward(x, cache=False) * upstream))
            flat[j] = orig
            gf[j] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries.

    The floor keeps entries whose true gradient is ~0 from turning
    finite-difference round-off into a huge relative error.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / den)))
    return worst


def gradient_check(net: Mlp, x: np.ndarray, upstream: np.ndarray, h: float = 1e-5) -> float:
    net.forward(x)
    analytic = net.backward(upstream)
    return max_relative_error(analytic, numerical_grads(net, x, upstream, h))
