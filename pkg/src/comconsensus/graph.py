"""Undirected communication graphs, Laplacians and their spectral decomposition."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraph, IllFormed

__all__ = [
    "Graph",
    "GraphSpectrum",
    "laplacian",
    "is_connected",
    "spectrum",
    "consensus_projector",
    "load_graph",
    "save_graph",
]

CONNECTIVITY_RTOL = 1e-9


@dataclass(frozen=True)
class Graph:
    """Undirected graph with 0/1 adjacency on nodes ``1..n_nodes``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``; the order in
    which they are given (and duplicates) does not matter.
    """

    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise IllFormed(f"n_nodes must be a positive integer, got {self.n_nodes!r}")
        normalized = set()
        for e in self.edges:
            try:
                i, j = (int(k) for k in e)
            except (TypeError, ValueError) as exc:
                raise IllFormed(f"edge {e!r} is not a pair of node ids") from exc
            if i == j:
                raise IllFormed(f"self-loop on node {i}")
            for k in (i, j):
                if not 1 <= k <= self.n_nodes:
                    raise IllFormed(f"node id {k} outside [1, {self.n_nodes}]")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, n_nodes, edges):
        return cls(n_nodes, frozenset(tuple(e) for e in edges))

    @classmethod
    def path(cls, n_nodes):
        return cls.from_edges(n_nodes, [(k, k + 1) for k in range(1, n_nodes)])

    @classmethod
    def complete(cls, n_nodes):
        return cls.from_edges(
            n_nodes, [(i, j) for i in range(1, n_nodes + 1) for j in range(i + 1, n_nodes + 1)]
        )

    def adjacency(self):
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i - 1, j - 1] = a[j - 1, i - 1] = 1.0
        return a

    def neighbors(self, i):
        """1-based neighbours of node ``i``."""
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    def to_dict(self):
        return {"n": self.n_nodes, "edges": [list(e) for e in sorted(self.edges)]}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise IllFormed("graph document must be a JSON object")
        if "n" not in d:
            raise IllFormed("graph document is missing field 'n'")
        if "edges" not in d:
            raise IllFormed("graph document is missing field 'edges'")
        if not isinstance(d["n"], int) or isinstance(d["n"], bool):
            raise IllFormed("field 'n' must be an integer")
        if not isinstance(d["edges"], list):
            raise IllFormed("field 'edges' must be a list of [i, j] pairs")
        for e in d["edges"]:
            if not (isinstance(e, (list, tuple)) and len(e) == 2):
                raise IllFormed(f"field 'edges' contains a malformed entry {e!r}")
        return cls.from_edges(d["n"], d["edges"])


@dataclass(frozen=True)
class GraphSpectrum:
    """Eigen-decomposition ``L = U diag(eigenvalues) U^T`` of a graph Laplacian.

    The first column of ``diagonalizer`` is exactly ``1/sqrt(N)``; every other
    column has its largest-magnitude entry positive.
    """

    laplacian: np.ndarray
    eigenvalues: np.ndarray
    diagonalizer: np.ndarray

    @property
    def n_nodes(self):
        return self.laplacian.shape[0]

    @property
    def lambda2(self):
        return float(self.eigenvalues[1]) if self.n_nodes > 1 else 0.0

    @property
    def lambdaN(self):
        return float(self.eigenvalues[-1])

    @property
    def nonzero_eigenvalues(self):
        return self.eigenvalues[1:]


def laplacian(g: Graph) -> np.ndarray:
    a = g.adjacency()
    return np.diag(a.sum(axis=1)) - a


def consensus_projector(n_nodes: int) -> np.ndarray:
    """``I - (1/N) 1 1^T``, the orthogonal projector onto the disagreement subspace."""
    return np.eye(n_nodes) - np.full((n_nodes, n_nodes), 1.0 / n_nodes)


def is_connected(g: Graph) -> bool:
    seen = {1}
    queue = deque([1])
    adj = {k: [] for k in range(1, g.n_nodes + 1)}
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    while queue:
        k = queue.popleft()
        for m in adj[k]:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return len(seen) == g.n_nodes


def _spectral_connected(eigenvalues):
    if len(eigenvalues) == 1:
        return True
    return eigenvalues[1] > CONNECTIVITY_RTOL * max(1.0, eigenvalues[-1])


def spectrum(g: Graph) -> GraphSpectrum:
    """Spectral decomposition of the Laplacian of a connected graph.

    Raises
    ------
    DisconnectedGraph
        If the second-smallest eigenvalue is not positive (relative tolerance
        ``1e-9 * max(1, lambda_N)``).
    """
    lap = laplacian(g)
    n = g.n_nodes
    evals, evecs = np.linalg.eigh(lap)
    if not _spectral_connected(evals):
        raise DisconnectedGraph(
            f"graph with {n} nodes is disconnected (lambda2 = {evals[1]:.3e})"
        )
    evals = evals.copy()
    evals[0] = 0.0
    u = evecs.copy()
    u[:, 0] = 1.0 / np.sqrt(n)
    for k in range(1, n):
        col = u[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            u[:, k] = -col
    return GraphSpectrum(laplacian=lap, eigenvalues=evals, diagonalizer=u)


def load_graph(path) -> Graph:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IllFormed(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return Graph.from_dict(doc)


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict()) + "\n")
