"""Fitted causal models: the diffusion-based DCM and the additive-noise baseline.

Both expose the same query surface as :class:`~diffscm.scm.GroundTruthScm`:

``sample(interventions, n, rng) -> (n, total_dim) array``
``counterfactual(factual, interventions) -> (n, total_dim) array``

``factual`` may be a plain value matrix or a :class:`~diffscm.scm.TracedBatch`
(fitted models only look at its values).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from diffscm.diffusion import (
    DEFAULT_HIDDEN,
    SCHEMA_VERSION,
    DiffusionNodeModel,
    make_schedule,
    train_node,
)
from diffscm.graph import CausalGraph, descendants, topological_order
from diffscm.io import atomic_write
from diffscm.scm import TracedBatch

log = logging.getLogger(__name__)


class CausalQueryModel(Protocol):
    graph: CausalGraph

    def sample(self, interventions: dict | None, n: int, rng: np.random.Generator) -> np.ndarray: ...

    def counterfactual(self, factual: Any, interventions: dict | None) -> np.ndarray: ...


class NodeTrainingError(RuntimeError):
    def __init__(self, node: int, cause: Exception):
        self.node = node
        super().__init__(f"training node {node} failed: {cause}")


def _values(factual, graph: CausalGraph) -> np.ndarray:
    vals = factual.values if isinstance(factual, TracedBatch) else factual
    vals = np.atleast_2d(np.asarray(vals, dtype=np.float64))
    if vals.shape[1] != graph.total_dim:
        raise ValueError(
            f"factual rows have {vals.shape[1]} columns, graph needs {graph.total_dim}"
        )
    if not np.all(np.isfinite(vals)):
        raise ValueError("factual observation has missing or non-finite entries")
    return vals


def _affected(graph: CausalGraph, ivs: dict) -> set[int]:
    out = set(ivs)
    for i in ivs:
        out |= descendants(graph, i)
    return out


class _TopologicalModel:
    """Shared Algorithm-2/3 style traversal; subclasses supply the per-node maps."""

    graph: CausalGraph
    root_empiricals: dict[int, np.ndarray]

    def _generate(self, i, parents, rng, n):
        raise NotImplementedError

    def _abduct(self, i, x, parents):
        raise NotImplementedError

    def _predict(self, i, latent, parents):
        raise NotImplementedError

    def sample(self, interventions: dict | None, n: int, rng: np.random.Generator) -> np.ndarray:
        g = self.graph
        ivs = g.check_interventions(interventions)
        sl = g.slices()
        out = np.empty((n, g.total_dim))
        for i in topological_order(g):
            if i in ivs:
                out[:, sl[i]] = ivs[i]
            elif not g.parent_sets[i]:
                emp = self.root_empiricals[i]
                out[:, sl[i]] = emp[rng.integers(0, len(emp), size=n)]
            else:
                out[:, sl[i]] = self._generate(i, out[:, g.parent_columns(i)], rng, n)
        return out

    def counterfactual(self, factual, interventions: dict | None) -> np.ndarray:
        g = self.graph
        x_f = _values(factual, g)
        ivs = g.check_interventions(interventions)
        affected = _affected(g, ivs)
        sl = g.slices()
        out = x_f.copy()
        for i in topological_order(g):
            if i not in affected:
                continue
            if i in ivs:
                out[:, sl[i]] = ivs[i]
                continue
            pc = g.parent_columns(i)
            latent = self._abduct(i, x_f[:, sl[i]], x_f[:, pc])
            out[:, sl[i]] = self._predict(i, latent, out[:, pc])
        return out


# ---------------------------------------------------------------- DCM


@dataclass
class DcmHyperparams:
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.1
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    epochs: int = 500
    batch_size: int = 64
    lr: float = 1e-4


@dataclass
class DcmModel(_TopologicalModel):
    graph: CausalGraph
    node_models: dict[int, DiffusionNodeModel]
    root_empiricals: dict[int, np.ndarray]
    hyperparams: DcmHyperparams = field(default_factory=DcmHyperparams)
    loss_traces: dict[int, list[float]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for i in range(self.graph.num_nodes):
            if self.graph.parent_sets[i] and i not in self.node_models:
                raise ValueError(f"non-root node {i} has no diffusion model")
            if not self.graph.parent_sets[i] and len(self.root_empiricals.get(i, ())) == 0:
                raise ValueError(f"root node {i} has no empirical sample")

    def _generate(self, i, parents, rng, n):
        z = rng.standard_normal((n, self.graph.node_dims[i]))
        return self.node_models[i].decode(z, parents)

    def _abduct(self, i, x, parents):
        return self.node_models[i].encode(x, parents)

    def _predict(self, i, latent, parents):
        return self.node_models[i].decode(latent, parents)

    def encode(self, i: int, x: np.ndarray, parents: np.ndarray) -> np.ndarray:
        return self.node_models[i].encode(x, parents)

    def to_json(self) -> dict:
        hp = asdict(self.hyperparams)
        hp["hidden"] = list(hp["hidden"])
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "dcm",
            "graph": self.graph.to_json(),
            "hyperparams": hp,
            "node_models": {str(i + 1): m.to_json() for i, m in sorted(self.node_models.items())},
            "root_empiricals": {str(i + 1): e.tolist() for i, e in sorted(self.root_empiricals.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DcmModel":
        if obj.get("schema_version") != SCHEMA_VERSION or obj.get("kind") != "dcm":
            raise ValueError("not a DCM model file with a supported schema_version")
        hp = dict(obj["hyperparams"])
        hp["hidden"] = tuple(hp["hidden"])
        return cls(
            CausalGraph.from_json(obj["graph"]),
            {int(k) - 1: DiffusionNodeModel.from_json(v) for k, v in obj["node_models"].items()},
            {int(k) - 1: np.array(v, dtype=np.float64) for k, v in obj["root_empiricals"].items()},
            DcmHyperparams(**hp),
        )

    def save(self, path: str | Path) -> None:
        atomic_write(path, json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "DcmModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _fit_one(i, x, parents, dim, parent_dim, hp: DcmHyperparams, seed):
    rng = np.random.default_rng(seed)
    schedule = make_schedule(hp.T, hp.beta_min, hp.beta_max)
    model = DiffusionNodeModel.create(i, dim, parent_dim, schedule, rng, tuple(hp.hidden))
    try:
        model, losses = train_node(model, x, parents, hp.epochs, hp.batch_size, hp.lr, rng)
    except Exception as exc:
        raise NodeTrainingError(i, exc) from exc
    return i, model, losses


def fit_dcm(
    data: np.ndarray,
    graph: CausalGraph,
    hyperparams: DcmHyperparams | None = None,
    rng: np.random.Generator | None = None,
    n_jobs: int = 1,
) -> DcmModel:
    """Train one diffusion model per non-root node; roots keep their training column."""
    hp = hyperparams or DcmHyperparams()
    rng = rng if rng is not None else np.random.default_rng(0)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != graph.total_dim:
        raise ValueError(f"data must have shape (n, {graph.total_dim}), got {data.shape}")
    sl = graph.slices()
    seeds = rng.integers(0, 2**63 - 1, size=graph.num_nodes)
    jobs = [
        (i, data[:, sl[i]], data[:, graph.parent_columns(i)], graph.node_dims[i],
         graph.parent_dim(i), hp, int(seeds[i]))
        for i in range(graph.num_nodes)
        if graph.parent_sets[i]
    ]
    if n_jobs == 1:
        results = [_fit_one(*job) for job in jobs]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_fit_one)(*job) for job in jobs)
    models = {i: m for i, m, _ in results}
    traces = {i: losses for i, _, losses in results}
    roots = {i: data[:, sl[i]].copy() for i in graph.roots}
    return DcmModel(graph, models, roots, hp, traces)


# ---------------------------------------------------------------- ANM


class _Constant:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def fit(self, X, y):
        return self

    def predict(self, X):
        return np.broadcast_to(self.value, (len(X), self.value.size)).copy()


def default_regressor_menu(seed: int) -> list[tuple[str, Any]]:
    """Candidate regressors, simplest first."""
    from sklearn.linear_model import Ridge
    from sklearn.neighbors import KNeighborsRegressor
    from sklearn.neural_network import MLPRegressor

    return [
        ("ridge", Ridge(alpha=1e-3)),
        ("knn", KNeighborsRegressor(n_neighbors=20)),
        (
            "mlp",
            MLPRegressor(
                hidden_layer_sizes=(64, 64), max_iter=300, early_stopping=True,
                n_iter_no_change=20, random_state=seed,
            ),
        ),
    ]


def _predict_2d(reg, X):
    return np.asarray(reg.predict(X), dtype=np.float64).reshape(len(X), -1)


def _fit_target(est, X, y):
    return est.fit(X, y[:, 0] if y.shape[1] == 1 else y)


def select_regressor(
    X: np.ndarray, y: np.ndarray, rng: np.random.Generator, folds: int = 5, menu=None
) -> tuple[str, Any, dict[str, float]]:
    """K-fold CV over the menu.

    Picks the simplest candidate whose mean RMSE is within one standard error
    of the best one, so a flexible model has to beat the linear one by more
    than fold-to-fold noise to be chosen.
    """
    from sklearn.base import clone
    from sklearn.model_selection import KFold

    if np.allclose(y, y[0]):
        return "constant", _Constant(y[0]), {"constant": 0.0}
    seed = int(rng.integers(0, 2**31 - 1))
    menu = menu if menu is not None else default_regressor_menu(seed)
    kf = KFold(n_splits=folds, shuffle=True, random_state=seed)
    splits = list(kf.split(X))
    scores: dict[str, np.ndarray] = {}
    for name, est in menu:
        errs = []
        for tr, te in splits:
            fitted = _fit_target(clone(est), X[tr], y[tr])
            errs.append(np.sqrt(np.mean((_predict_2d(fitted, X[te]) - y[te]) ** 2)))
        scores[name] = np.asarray(errs)
    means = {k: float(v.mean()) for k, v in scores.items()}
    best = min(means, key=means.get)
    threshold = means[best] + scores[best].std(ddof=1) / np.sqrt(folds)
    chosen = next(name for name, _ in menu if means[name] <= threshold)
    est = dict(menu)[chosen]
    return chosen, _fit_target(clone(est), X, y), means


@dataclass
class AnmModel(_TopologicalModel):
    graph: CausalGraph
    regressors: dict[int, Any]
    residuals: dict[int, np.ndarray]
    root_empiricals: dict[int, np.ndarray]
    selected: dict[int, str] = field(default_factory=dict)
    cv_scores: dict[int, dict[str, float]] = field(default_factory=dict, repr=False)

    def predict(self, i: int, parents: np.ndarray) -> np.ndarray:
        return _predict_2d(self.regressors[i], parents)

    def _generate(self, i, parents, rng, n):
        res = self.residuals[i]
        return self.predict(i, parents) + res[rng.integers(0, len(res), size=n)]

    def _abduct(self, i, x, parents):
        return x - self.predict(i, parents)

    def _predict(self, i, latent, parents):
        return self.predict(i, parents) + latent

    def encode(self, i: int, x: np.ndarray, parents: np.ndarray) -> np.ndarray:
        return self._abduct(i, x, parents)


def fit_anm(
    data: np.ndarray,
    graph: CausalGraph,
    rng: np.random.Generator | None = None,
    folds: int = 5,
    menu=None,
) -> AnmModel:
    """Regress every non-root node on its parents and keep the training residuals."""
    rng = rng if rng is not None else np.random.default_rng(0)
    data = np.asarray(data, dtype=np.float64)
    sl = graph.slices()
    regs, res, chosen, scores = {}, {}, {}, {}
    for i in topological_order(graph):
        if not graph.parent_sets[i]:
            continue
        X = data[:, graph.parent_columns(i)]
        y = data[:, sl[i]]
        name, reg, sc = select_regressor(X, y, rng, folds, menu)
        regs[i], chosen[i], scores[i] = reg, name, sc
        res[i] = y - _predict_2d(reg, X)
    roots = {i: data[:, sl[i]].copy() for i in graph.roots}
    return AnmModel(graph, regs, res, roots, chosen, scores)
