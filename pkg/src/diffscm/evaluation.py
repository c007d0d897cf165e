"""Benchmark protocols: observational MMD, interventional MMD, counterfactual MSE."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from diffscm.graph import CausalGraph, descendants
from diffscm.metrics import KernelSpec, mmd_rbf, mse_paired
from diffscm.models import CausalQueryModel, DcmHyperparams, fit_anm, fit_dcm
from diffscm.rng import substream
from diffscm.scm import GroundTruthScm, benchmark_scm

log = logging.getLogger(__name__)

METRICS = ("obs_mmd", "int_mmd", "cf_mse")
MODEL_KINDS = ("dcm", "anm", "oracle")
REPORT_SCHEMA_VERSION = 1


def node_columns(graph: CausalGraph, nodes) -> np.ndarray:
    sl = graph.slices()
    cols = [np.arange(sl[i].start, sl[i].stop) for i in sorted(nodes)]
    return np.concatenate(cols) if cols else np.zeros(0, dtype=int)


def descendant_columns(graph: CausalGraph, node: int) -> np.ndarray:
    return node_columns(graph, descendants(graph, node))


def intervention_grid(train_values: np.ndarray, graph: CausalGraph, node: int, num: int = 20) -> np.ndarray:
    """``num`` values between the 10% and 90% quantiles, per dimension, shape ``(num, d)``."""
    if num < 2:
        raise ValueError("need at least 2 intervention values")
    col = train_values[:, graph.slices()[node]]
    lo = np.quantile(col, 0.1, axis=0)
    hi = np.quantile(col, 0.9, axis=0)
    return np.linspace(lo, hi, num)


def auto_intervention_nodes(graph_kind: str, graph: CausalGraph, rng: np.random.Generator) -> list[int]:
    non_sinks = [i for i in range(graph.num_nodes) if not graph.is_sink(i)]
    if graph_kind == "ladder":
        return [1, 2]
    if graph_kind == "random":
        k = min(3, len(non_sinks))
        return sorted(int(i) for i in rng.choice(non_sinks, size=k, replace=False))
    return non_sinks


def eval_observational(
    model: CausalQueryModel,
    oracle: GroundTruthScm,
    n: int,
    rng: np.random.Generator,
    kernel: KernelSpec | None = None,
) -> float | None:
    """MMD over the non-root columns; ``None`` when every node is a root."""
    g = oracle.graph
    cols = node_columns(g, [i for i in range(g.num_nodes) if g.parent_sets[i]])
    if cols.size == 0:
        return None
    fitted = model.sample({}, n, rng)
    truth = oracle.sample({}, n, rng)
    return mmd_rbf(fitted[:, cols], truth[:, cols], kernel)


def _usable(graph: CausalGraph, nodes: Sequence[int]) -> list[int]:
    out = []
    for i in nodes:
        if descendants(graph, i):
            out.append(i)
        else:
            warnings.warn(f"node {i} has no descendants; skipped", RuntimeWarning)
    return out


def eval_interventional(
    model: CausalQueryModel,
    oracle: GroundTruthScm,
    nodes: Sequence[int],
    grids: dict[int, np.ndarray],
    samples_per_gamma: int,
    rng: np.random.Generator,
    kernel: KernelSpec | None = None,
) -> tuple[float, list[dict]]:
    """Mean MMD over all (node, gamma) pairs, restricted to descendant columns."""
    g = oracle.graph
    deltas = []
    for i in _usable(g, nodes):
        cols = descendant_columns(g, i)
        for j, gamma in enumerate(grids[i]):
            ivs = {i: gamma}
            fitted = model.sample(ivs, samples_per_gamma, rng)[:, cols]
            truth = oracle.sample(ivs, samples_per_gamma, rng)[:, cols]
            deltas.append({"node": i, "gamma_index": j, "value": mmd_rbf(fitted, truth, kernel)})
    if not deltas:
        return float("nan"), deltas
    return float(np.mean([d["value"] for d in deltas])), deltas


def eval_counterfactual(
    model: CausalQueryModel,
    oracle: GroundTruthScm,
    nodes: Sequence[int],
    grids: dict[int, np.ndarray],
    n_factual: int,
    rng: np.random.Generator,
) -> tuple[float, list[dict]]:
    """Mean MSE between estimated and true counterfactuals on descendant columns."""
    g = oracle.graph
    deltas = []
    for i in _usable(g, nodes):
        cols = descendant_columns(g, i)
        for j, gamma in enumerate(grids[i]):
            factual = oracle.sample_observational(n_factual, rng)
            ivs = {i: gamma}
            est = model.counterfactual(factual, ivs)[:, cols]
            truth = oracle.true_counterfactual(factual, ivs)[:, cols]
            deltas.append({"node": i, "gamma_index": j, "value": mse_paired(est, truth)})
    if not deltas:
        return float("nan"), deltas
    return float(np.mean([d["value"] for d in deltas])), deltas


# ---------------------------------------------------------------- orchestration


@dataclass
class BenchmarkConfig:
    graph_kind: str = "chain"
    sem_kind: str = "NLIN"
    n_train: int = 2000
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    intervention_nodes: list[int] | str = "auto"
    num_gammas: int = 20
    samples_per_gamma: int = 100
    n_obs: int = 1000
    models: list[str] = field(default_factory=lambda: ["dcm", "anm"])
    dcm: DcmHyperparams = field(default_factory=lambda: DcmHyperparams(epochs=200))
    n_jobs: int = 1

    def __post_init__(self):
        if self.num_gammas < 2:
            raise ValueError("num_gammas must be >= 2")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        bad = set(self.models) - set(MODEL_KINDS)
        if bad:
            raise ValueError(f"unknown model kinds {sorted(bad)}")
        if isinstance(self.dcm, dict):
            hp = dict(self.dcm)
            if "hidden" in hp:
                hp["hidden"] = tuple(hp["hidden"])
            self.dcm = DcmHyperparams(**hp)

    def to_json(self) -> dict:
        out = asdict(self)
        out["dcm"]["hidden"] = list(out["dcm"]["hidden"])
        return out


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    cells: list[dict] = field(default_factory=list)

    def values(self, model: str, metric: str) -> list[float]:
        return [
            c["value"] for c in self.cells
            if c["model"] == model and c["metric"] == metric and c["status"] == "ok"
            and c["value"] is not None
        ]

    def aggregate(self) -> dict[str, dict[str, dict]]:
        out: dict = {}
        for model in self.config.models:
            out[model] = {}
            for metric in METRICS:
                vals = self.values(model, metric)
                out[model][metric] = {
                    "mean": float(np.mean(vals)) if vals else None,
                    "std": float(np.std(vals)) if vals else None,
                    "n": len(vals),
                }
        return out

    def to_json(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "config": self.config.to_json(),
            "cells": self.cells,
            "aggregate": self.aggregate(),
        }

    def to_csv(self, scale: float = 1.0) -> str:
        """One row per metric, one mean/std column pair per model."""
        agg = self.aggregate()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["graph", "sem", "metric"]
        for m in self.config.models:
            header += [f"{m}_mean", f"{m}_std"]
        w.writerow(header)
        for metric in METRICS:
            row = [self.config.graph_kind, self.config.sem_kind, metric]
            for m in self.config.models:
                cell = agg[m][metric]
                for key in ("mean", "std"):
                    row.append("" if cell[key] is None else f"{cell[key] * scale:.6g}")
            w.writerow(row)
        return buf.getvalue()

    def save(self, json_path: str | Path, csv_path: str | Path | None = None, scale: float = 1.0) -> None:
        from diffscm.io import atomic_write

        atomic_write(json_path, json.dumps(self.to_json(), indent=2, sort_keys=True))
        if csv_path is not None:
            atomic_write(csv_path, self.to_csv(scale))


def _fit_model(kind: str, train: np.ndarray, oracle: GroundTruthScm, config: BenchmarkConfig, seed: int):
    if kind == "oracle":
        return oracle
    if kind == "dcm":
        return fit_dcm(train, oracle.graph, config.dcm, substream(seed, "fit/dcm"), n_jobs=config.n_jobs)
    if kind == "anm":
        return fit_anm(train, oracle.graph, substream(seed, "fit/anm"))
    raise ValueError(kind)


def evaluate_model(
    model: CausalQueryModel,
    oracle: GroundTruthScm,
    train: np.ndarray,
    nodes: Sequence[int],
    config: BenchmarkConfig,
    seed: int,
) -> dict[str, float | None]:
    """The three metrics for one fitted model, each on its own random stream."""
    g = oracle.graph
    grids = {i: intervention_grid(train, g, i, config.num_gammas) for i in nodes}
    obs = eval_observational(model, oracle, config.n_obs, substream(seed, "eval/obs"))
    intv, _ = eval_interventional(
        model, oracle, nodes, grids, config.samples_per_gamma, substream(seed, "eval/int")
    )
    cf, _ = eval_counterfactual(
        model, oracle, nodes, grids, config.samples_per_gamma, substream(seed, "eval/cf")
    )
    return {"obs_mmd": obs, "int_mmd": intv, "cf_mse": cf}


def run_benchmark(config: BenchmarkConfig) -> BenchmarkReport:
    report = BenchmarkReport(config)
    for seed in config.seeds:
        oracle = benchmark_scm(config.graph_kind, config.sem_kind, substream(seed, "scm"))
        g = oracle.graph
        train = oracle.sample_observational(config.n_train, substream(seed, "train")).values
        if config.intervention_nodes == "auto":
            nodes = auto_intervention_nodes(config.graph_kind, g, substream(seed, "interventions"))
        else:
            nodes = [int(i) for i in config.intervention_nodes]
        for kind in config.models:
            t0 = time.perf_counter()
            try:
                model = _fit_model(kind, train, oracle, config, seed)
                metrics = evaluate_model(model, oracle, train, nodes, config, seed)
            except Exception as exc:  # noqa: BLE001 - recorded per cell, run continues
                log.exception("seed %d model %s failed", seed, kind)
                for metric in METRICS:
                    report.cells.append(
                        {"model": kind, "metric": metric, "seed": seed, "value": None,
                         "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
                    )
                continue
            log.info("seed %d %s done in %.1fs: %s", seed, kind, time.perf_counter() - t0, metrics)
            for metric, value in metrics.items():
                report.cells.append(
                    {"model": kind, "metric": metric, "seed": seed,
                     "value": None if value is None else float(value),
                     "status": "ok" if value is not None else "not_applicable",
                     "intervention_nodes": [i + 1 for i in nodes]}
                )
    return report
