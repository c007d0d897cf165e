"""Per-node conditional diffusion models and the deterministic DDIM encoder/decoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from diffscm.nn import AdamState, Mlp

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_HIDDEN = (128, 256, 256)


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule. ``alphas[t]`` is the cumulative product up to t; ``alphas[0] == 1``."""

    T: int
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    beta_min: float = 1e-4
    beta_max: float = 0.1

    def to_json(self) -> dict:
        return {"T": self.T, "beta_min": self.beta_min, "beta_max": self.beta_max}

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSchedule":
        return make_schedule(int(obj["T"]), float(obj["beta_min"]), float(obj["beta_max"]))


def make_schedule(T: int = 100, beta_min: float = 1e-4, beta_max: float = 0.1) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if T == 1:
        betas = np.array([beta_min])
    else:
        t = np.arange(1, T + 1)
        betas = (beta_max - beta_min) * (t - 1) / (T - 1) + beta_min
    alphas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T, betas, alphas, float(beta_min), float(beta_max))


EpsFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class DiffusionNodeModel:
    """Noise predictor for one node, conditioned on its parents and on t/T.

    ``net`` maps the row-wise concatenation ``[noisy value, parents, t/T]`` to
    a noise estimate of the node's dimension. Any callable with that contract
    works (tests plug in closed-form predictors); training needs an :class:`Mlp`.
    """

    node: int
    dim: int
    parent_dim: int
    schedule: NoiseSchedule
    net: EpsFn

    @classmethod
    def create(
        cls,
        node: int,
        dim: int,
        parent_dim: int,
        schedule: NoiseSchedule,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    ) -> "DiffusionNodeModel":
        net = Mlp.init([dim + parent_dim + 1, *hidden, dim], rng)
        return cls(node, dim, parent_dim, schedule, net)

    @property
    def input_dim(self) -> int:
        return self.dim + self.parent_dim + 1

    def eps(self, x: np.ndarray, parents: np.ndarray, t: int | np.ndarray) -> np.ndarray:
        n = x.shape[0]
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64) / self.schedule.T, (n,))
        return np.asarray(self.net(np.column_stack([x, parents, tt])), dtype=np.float64)

    def _rows(self, x: np.ndarray, parents: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x) if not single else x[None, :]
        if parents is None:
            parents = np.zeros((x.shape[0], 0))
        parents = np.asarray(parents, dtype=np.float64)
        if parents.ndim == 1:
            parents = parents[None, :]
        if parents.shape[0] == 1 and x.shape[0] > 1:
            parents = np.repeat(parents, x.shape[0], axis=0)
        if x.shape[1] != self.dim or parents.shape != (x.shape[0], self.parent_dim):
            raise ValueError(
                f"node {self.node}: got value shape {x.shape} and parent shape {parents.shape}, "
                f"expected (n, {self.dim}) and (n, {self.parent_dim})"
            )
        return x, parents, single

    def encode(self, x: np.ndarray, parents: np.ndarray | None = None) -> np.ndarray:
        """Deterministic forward implicit diffusion from t=0 to t=T."""
        z, parents, single = self._rows(x, parents)
        a = self.schedule.alphas
        for t in range(self.schedule.T):
            ratio = np.sqrt(a[t + 1] / a[t])
            coef = np.sqrt(1.0 - a[t + 1]) - np.sqrt(a[t + 1] * (1.0 - a[t]) / a[t])
            z = ratio * z + coef * self.eps(z, parents, t)
        return z[0] if single else z

    def decode(self, z: np.ndarray, parents: np.ndarray | None = None) -> np.ndarray:
        """Deterministic reverse implicit diffusion from t=T to t=0."""
        x, parents, single = self._rows(z, parents)
        a = self.schedule.alphas
        for t in range(self.schedule.T, 0, -1):
            ratio = np.sqrt(a[t - 1] / a[t])
            coef = np.sqrt(a[t - 1] * (1.0 - a[t]) / a[t]) - np.sqrt(1.0 - a[t - 1])
            x = ratio * x - coef * self.eps(x, parents, t)
        return x[0] if single else x

    def to_json(self) -> dict:
        if not isinstance(self.net, Mlp):
            raise TypeError("only Mlp-backed models can be serialized")
        return {
            "schema_version": SCHEMA_VERSION,
            "node": self.node,
            "dim": self.dim,
            "parent_dim": self.parent_dim,
            "schedule": self.schedule.to_json(),
            "net": self.net.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiffusionNodeModel":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {obj.get('schema_version')!r}")
        return cls(
            int(obj["node"]),
            int(obj["dim"]),
            int(obj["parent_dim"]),
            NoiseSchedule.from_json(obj["schedule"]),
            Mlp.from_json(obj["net"]),
        )


def train_node(
    model: DiffusionNodeModel,
    x: np.ndarray,
    parents: np.ndarray | None,
    epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
) -> tuple[DiffusionNodeModel, list[float]]:
    """Fit the noise predictor with the epsilon-regression objective.

    Each epoch visits the shuffled data once in minibatches; every row gets its
    own diffusion step t ~ Unif{1..T} and Gaussian noise. Returns the model
    (updated in place) and the mean loss of every epoch.
    """
    if not isinstance(model.net, Mlp):
        raise TypeError("train_node needs an Mlp-backed model")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    x, parents, _ = model._rows(x, parents)
    n = x.shape[0]
    net = model.net
    a = model.schedule.alphas
    T = model.schedule.T
    opt = AdamState(learning_rate=lr)
    grad = np.zeros_like(net.params)
    inp = np.empty((batch_size, model.input_dim))
    d, pd = model.dim, model.parent_dim
    losses = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            b = len(idx)
            t = rng.integers(1, T + 1, size=b)
            noise = rng.standard_normal((b, d))
            at = a[t][:, None]
            buf = inp[:b]
            buf[:, :d] = np.sqrt(at) * x[idx] + np.sqrt(1.0 - at) * noise
            buf[:, d : d + pd] = parents[idx]
            buf[:, -1] = t / T
            pred, cache = net.forward(buf)
            resid = pred - noise
            batch_loss = float(np.sum(resid * resid))
            if not np.isfinite(batch_loss):
                raise FloatingPointError(f"node {model.node}: non-finite loss at epoch {epoch}")
            total += batch_loss
            net.backward(cache, resid * (2.0 / b), out=grad)
            opt.step(net.params, grad)
        losses.append(total / n)
        if log.isEnabledFor(logging.DEBUG) and (epoch % 50 == 0 or epoch == epochs - 1):
            log.debug("node %d epoch %d loss %.5f", model.node, epoch, losses[-1])
    return model, losses
