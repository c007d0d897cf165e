"""Causal DAGs with per-node dimensions.

Nodes are 0-based in the Python API. Files and the CLI use 1-based indices
and node names ``x1 .. xK``.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GRAPH_KINDS = ("chain", "triangle", "diamond", "y", "ladder", "random")


class CycleError(ValueError):
    """Raised when a graph has no topological order."""

    def __init__(self, nodes: Iterable[int]):
        self.nodes = sorted(nodes)
        super().__init__(f"graph contains a cycle through nodes {self.nodes}")


@dataclass(frozen=True)
class CausalGraph:
    node_dims: tuple[int, ...]
    parent_sets: tuple[tuple[int, ...], ...]
    node_names: tuple[str, ...] = ()
    _order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.node_dims)
        parents = tuple(tuple(sorted({int(p) for p in ps})) for ps in self.parent_sets)
        k = len(dims)
        if k == 0:
            raise ValueError("graph needs at least one node")
        if len(parents) != k:
            raise ValueError(f"{len(parents)} parent sets for {k} nodes")
        if any(d < 1 for d in dims):
            raise ValueError(f"node dimensions must be positive, got {dims}")
        for i, ps in enumerate(parents):
            for p in ps:
                if not 0 <= p < k:
                    raise ValueError(f"node {i} has invalid parent index {p}")
                if p == i:
                    raise ValueError(f"node {i} is its own parent")
        names = tuple(self.node_names) or tuple(f"x{i + 1}" for i in range(k))
        if len(names) != k or len(set(names)) != k:
            raise ValueError("node_names must be K distinct strings")
        object.__setattr__(self, "node_dims", dims)
        object.__setattr__(self, "parent_sets", parents)
        object.__setattr__(self, "node_names", names)
        object.__setattr__(self, "_order", _kahn(parents))

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[tuple[int, int]],
        node_dims: Sequence[int] | int = 1,
        node_names: Sequence[str] = (),
    ) -> "CausalGraph":
        """Build a graph from 0-based ``(parent, child)`` pairs."""
        if isinstance(node_dims, int):
            node_dims = [node_dims] * num_nodes
        parents: list[set[int]] = [set() for _ in range(num_nodes)]
        for u, v in edges:
            if not 0 <= v < num_nodes:
                raise ValueError(f"edge ({u}, {v}) points to an invalid node")
            parents[v].add(u)
        return cls(tuple(node_dims), tuple(tuple(p) for p in parents), tuple(node_names))

    @property
    def num_nodes(self) -> int:
        return len(self.node_dims)

    @property
    def total_dim(self) -> int:
        return sum(self.node_dims)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, i) for i, ps in enumerate(self.parent_sets) for p in ps]

    @property
    def roots(self) -> list[int]:
        return [i for i, ps in enumerate(self.parent_sets) if not ps]

    def children(self, node: int) -> list[int]:
        return [i for i, ps in enumerate(self.parent_sets) if node in ps]

    def is_sink(self, node: int) -> bool:
        return not self.children(node)

    def slices(self) -> list[slice]:
        """Column slice of every node in a flat ``(n, total_dim)`` data matrix."""
        out, start = [], 0
        for d in self.node_dims:
            out.append(slice(start, start + d))
            start += d
        return out

    def parent_columns(self, node: int) -> np.ndarray:
        sl = self.slices()
        cols = [np.arange(sl[p].start, sl[p].stop) for p in self.parent_sets[node]]
        return np.concatenate(cols) if cols else np.zeros(0, dtype=int)

    def parent_dim(self, node: int) -> int:
        return sum(self.node_dims[p] for p in self.parent_sets[node])

    def check_interventions(self, interventions: dict | None) -> dict[int, np.ndarray]:
        """Validate ``{node: value}`` and return values as float arrays of shape ``(d_i,)``."""
        out = {}
        for node, value in (interventions or {}).items():
            node = int(node)
            if not 0 <= node < self.num_nodes:
                raise IndexError(f"intervention on invalid node {node}")
            arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
            if arr.shape != (self.node_dims[node],):
                raise ValueError(
                    f"intervention on node {node} has shape {arr.shape}, "
                    f"expected ({self.node_dims[node]},)"
                )
            out[node] = arr
        return out

    def column_names(self) -> list[str]:
        return [f"{name}.{j + 1}" for name, d in zip(self.node_names, self.node_dims) for j in range(d)]

    def to_json(self) -> dict:
        return {
            "nodes": [{"name": n, "dim": d} for n, d in zip(self.node_names, self.node_dims)],
            "edges": [[u + 1, v + 1] for u, v in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CausalGraph":
        nodes = obj["nodes"]
        edges = [(int(u) - 1, int(v) - 1) for u, v in obj["edges"]]
        return cls.from_edges(
            len(nodes), edges, [int(n["dim"]) for n in nodes], [str(n["name"]) for n in nodes]
        )

    def save(self, path: str | Path) -> None:
        from diffscm.io import atomic_write

        atomic_write(path, json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "CausalGraph":
        return cls.from_json(json.loads(Path(path).read_text()))


def _kahn(parent_sets: tuple[tuple[int, ...], ...]) -> tuple[int, ...]:
    k = len(parent_sets)
    indeg = [len(ps) for ps in parent_sets]
    children: list[list[int]] = [[] for _ in range(k)]
    for i, ps in enumerate(parent_sets):
        for p in ps:
            children[p].append(i)
    heap = [i for i in range(k) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for c in children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) < k:
        raise CycleError(_find_cycle(parent_sets, {i for i in range(k) if indeg[i] > 0}))
    return tuple(order)


def _find_cycle(parent_sets: tuple[tuple[int, ...], ...], stuck: set[int]) -> list[int]:
    # every stuck node has a stuck parent, so walking parents must revisit a node
    path: list[int] = []
    pos: dict[int, int] = {}
    node = min(stuck)
    while node not in pos:
        pos[node] = len(path)
        path.append(node)
        node = next(p for p in parent_sets[node] if p in stuck)
    return path[pos[node]:]


def topological_order(graph: CausalGraph) -> list[int]:
    """Kahn's algorithm; ties go to the smallest index."""
    return list(graph._order)


def descendants(graph: CausalGraph, node: int) -> set[int]:
    if not 0 <= node < graph.num_nodes:
        raise IndexError(f"node {node} out of range for {graph.num_nodes} nodes")
    children: list[list[int]] = [[] for _ in range(graph.num_nodes)]
    for u, v in graph.edges:
        children[u].append(v)
    seen: set[int] = set()
    queue = deque(children[node])
    while queue:
        v = queue.popleft()
        if v not in seen:
            seen.add(v)
            queue.extend(children[v])
    return seen


def is_connected(num_nodes: int, edges: Iterable[tuple[int, int]]) -> bool:
    """Connectivity of the undirected skeleton."""
    adj: list[list[int]] = [[] for _ in range(num_nodes)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    stack = [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == num_nodes


def random_dag(
    num_nodes: int,
    edge_prob: float,
    rng: np.random.Generator,
    node_dims: Sequence[int] | int = 1,
    max_tries: int = 10_000,
) -> CausalGraph:
    """Random upper-triangular DAG, resampled until the skeleton is connected."""
    if num_nodes < 2:
        raise ValueError("random_dag needs at least 2 nodes")
    if not 0.0 < edge_prob <= 1.0:
        raise ValueError(f"edge_prob must be in (0, 1], got {edge_prob}")
    iu = np.triu_indices(num_nodes, k=1)
    for _ in range(max_tries):
        mask = rng.random(len(iu[0])) < edge_prob
        edges = [(int(u), int(v)) for u, v, m in zip(iu[0], iu[1], mask) if m]
        if is_connected(num_nodes, edges):
            return CausalGraph.from_edges(num_nodes, edges, node_dims)
    raise RuntimeError(
        f"no connected DAG after {max_tries} draws (num_nodes={num_nodes}, edge_prob={edge_prob})"
    )


# 0-based edge lists of the fixed benchmark graphs.
_FIXED_EDGES = {
    "chain": (3, [(0, 1), (1, 2)]),
    "triangle": (3, [(0, 1), (0, 2), (1, 2)]),
    "diamond": (4, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]),
    "y": (4, [(0, 2), (1, 2), (2, 3)]),
    "ladder": (
        10,
        [(0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 5), (4, 5),
         (4, 6), (5, 7), (6, 7), (6, 8), (7, 9), (8, 9)],
    ),
}


def named_graph(kind: str, node_dims: Sequence[int] | int | None = None) -> CausalGraph:
    """One of the fixed benchmark graphs: chain, triangle, diamond, y, ladder."""
    if kind not in _FIXED_EDGES:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {sorted(_FIXED_EDGES)}")
    k, edges = _FIXED_EDGES[kind]
    if node_dims is None:
        node_dims = 3 if kind == "ladder" else 1
    return CausalGraph.from_edges(k, edges, node_dims)
