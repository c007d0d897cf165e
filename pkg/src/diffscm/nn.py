"""Dense MLPs with SiLU hidden layers, hand-written backprop, and Adam.

All parameters of an :class:`Mlp` live in one flat float64 vector; the
per-layer weight matrices (shape ``(fan_in, fan_out)``) and biases are views
into it, so the optimizer updates everything in a single pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from diffscm import kernels


def silu(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x * expit(x)


class Mlp:
    def __init__(self, layer_sizes: Sequence[int], flat_params: np.ndarray | None = None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        n = self.num_params(self.layer_sizes)
        if flat_params is None:
            flat_params = np.zeros(n)
        flat_params = np.ascontiguousarray(flat_params, dtype=np.float64)
        if flat_params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got shape {flat_params.shape}")
        self.params = flat_params
        self.weights, self.biases = _views(self.params, self.layer_sizes)

    @staticmethod
    def num_params(layer_sizes: Sequence[int]) -> int:
        return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))

    @classmethod
    def init(cls, layer_sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        net = cls(layer_sizes)
        for w, b in zip(net.weights, net.biases):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
        return net

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.params.copy())

    def _check(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input shape {x.shape} does not match input size {self.in_dim}")
        return x, single

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x, single = self._check(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w
            z += b
            h = kernels.silu_forward(z)[0] if i < last else z
        return h[0] if single else h

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass that keeps what :meth:`backward` needs."""
        x, _ = self._check(x)
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w
            z += b
            if i < last:
                a, sig = kernels.silu_forward(z)
                cache.append((h, z, sig))
                h = a
            else:
                cache.append((h, None, None))
                h = z
        return h, cache

    def backward(
        self, cache: list, upstream: np.ndarray, out: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``sum(output * upstream)``.

        Returns ``(flat_param_grad, input_grad)``; ``flat_param_grad`` is laid
        out like :attr:`params`.
        """
        grad = np.zeros_like(self.params) if out is None else out
        gw, gb = _views(grad, self.layer_sizes)
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i][0]
            np.matmul(h_in.T, g, out=gw[i])
            np.sum(g, axis=0, out=gb[i])
            g = g @ self.weights[i].T
            if i > 0:
                _, z, sig = cache[i - 1]
                g = kernels.silu_backward(g, z, sig)
        return grad, g

    def grad(self, x: np.ndarray, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Per-layer ``[dW0, db0, dW1, db1, ...]`` and the input gradient."""
        x_arr = np.asarray(x, dtype=np.float64)
        _, cache = self.forward(x_arr)
        flat, gx = self.backward(cache, upstream)
        gw, gb = _views(flat, self.layer_sizes)
        per_layer = [a for pair in zip(gw, gb) for a in pair]
        return per_layer, (gx[0] if x_arr.ndim == 1 else gx)

    def to_json(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Mlp":
        net = cls(obj["layer_sizes"])
        for w, src in zip(net.weights, obj["weights"]):
            w[...] = np.asarray(src, dtype=np.float64)
        for b, src in zip(net.biases, obj["biases"]):
            b[...] = np.asarray(src, dtype=np.float64)
        return net


def _views(flat: np.ndarray, sizes: Sequence[int]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    ws, bs = [], []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        ws.append(flat[pos : pos + a * b].reshape(a, b))
        pos += a * b
        bs.append(flat[pos : pos + b])
        pos += b
    return ws, bs


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Bias-corrected Adam update, applied to ``params`` in place."""
        if not np.all(np.isfinite(grads)):
            bad = int(np.count_nonzero(~np.isfinite(grads)))
            raise FloatingPointError(f"Adam received {bad} non-finite gradient entries")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        if self.m.shape != params.shape:
            raise ValueError(f"moment shape {self.m.shape} != parameter shape {params.shape}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        kernels.adam_update(
            params, grads, self.m, self.v,
            self.learning_rate / bc1, self.beta1, self.beta2, self.epsilon, 1.0 / bc2,
        )
        return params
