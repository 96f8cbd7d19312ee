import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comconsensus.errors import DisconnectedGraph, IllFormed
from comconsensus.graph import (
    Graph,
    consensus_projector,
    is_connected,
    laplacian,
    load_graph,
    save_graph,
    spectrum,
)


def bfs_connected(n, edges):
    adj = [[] for _ in range(n)]
    for i, j in edges:
        adj[i - 1].append(j - 1)
        adj[j - 1].append(i - 1)
    seen, q = {0}, deque([0])
    while q:
        for k in adj[q.popleft()]:
            if k not in seen:
                seen.add(k)
                q.append(k)
    return len(seen) == n


@st.composite
def graphs(draw, max_nodes=12):
    n = draw(st.integers(1, max_nodes))
    pairs = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=len(pairs))) if pairs else []
    return Graph.from_edges(n, edges)


@st.composite
def connected_graphs(draw, max_nodes=12):
    n = draw(st.integers(1, max_nodes))
    # random spanning tree plus extra edges
    edges = [(draw(st.integers(1, k - 1)), k) for k in range(2, n + 1)]
    pairs = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    if pairs:
        edges += draw(st.lists(st.sampled_from(pairs), max_size=2 * n))
    return Graph.from_edges(n, edges)


def test_two_node_path_laplacian():
    assert np.array_equal(laplacian(Graph.path(2)), [[1, -1], [-1, 1]])


def test_triangle_spectrum():
    assert np.allclose(spectrum(Graph.complete(3)).eigenvalues, [0, 3, 3], atol=1e-12)


def test_benchmark_eigenvalues(spec):
    assert spec.lambda2 == pytest.approx(1.3820, abs=1e-3)
    assert spec.lambdaN == pytest.approx(5.3028, abs=1e-3)
    # closed forms: (5 - sqrt 5)/2 and (7 + sqrt 13)/2
    assert spec.lambda2 == pytest.approx((5 - np.sqrt(5)) / 2, abs=1e-12)
    assert spec.lambdaN == pytest.approx((7 + np.sqrt(13)) / 2, abs=1e-12)


def test_benchmark_projector_diagonalized(spec):
    U = spec.diagonalizer
    M = consensus_projector(6)
    assert np.allclose(U.T @ M @ U, np.diag([0, 1, 1, 1, 1, 1]), atol=1e-10)


def test_connectivity_examples(graph):
    assert not is_connected(Graph(2))
    assert is_connected(Graph.path(3))
    assert is_connected(graph)


def test_single_node():
    sp = spectrum(Graph(1))
    assert sp.eigenvalues.tolist() == [0.0]
    assert sp.diagonalizer.tolist() == [[1.0]]
    assert sp.lambda2 == 0.0


def test_two_node_spectrum():
    assert np.allclose(spectrum(Graph.path(2)).eigenvalues, [0, 2])


def test_disconnected_raises():
    with pytest.raises(DisconnectedGraph):
        spectrum(Graph.from_edges(4, [(1, 2), (3, 4)]))


@pytest.mark.parametrize("edges", [[(1, 1)], [(0, 1)], [(1, 5)], [("a", 2)]])
def test_invalid_edges(edges):
    with pytest.raises(IllFormed):
        Graph.from_edges(4, edges)


def test_edges_are_unordered():
    assert Graph.from_edges(3, [(2, 1), (1, 2), (3, 2)]) == Graph.from_edges(3, [(1, 2), (2, 3)])


def test_json_round_trip(tmp_path, graph):
    path = tmp_path / "g.json"
    save_graph(graph, path)
    assert load_graph(path) == graph


@pytest.mark.parametrize("doc,field", [({"edges": []}, "'n'"), ({"n": 3}, "'edges'"),
                                       ({"n": "3", "edges": []}, "'n'"), ({"n": 3, "edges": [[1]]}, "'edges'")])
def test_json_errors_name_field(tmp_path, doc, field):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(IllFormed, match=field):
        load_graph(path)


def test_bad_json(tmp_path):
    path = tmp_path / "g.json"
    path.write_text("{not json")
    with pytest.raises(IllFormed):
        load_graph(path)


@settings(max_examples=100, deadline=None)
@given(graphs())
def test_laplacian_structure(g):
    L = laplacian(g)
    assert np.array_equal(L, L.T)
    assert np.array_equal(L @ np.ones(g.n_nodes), np.zeros(g.n_nodes))
    assert np.linalg.eigvalsh(L)[0] >= -1e-10
    assert is_connected(g) == bfs_connected(g.n_nodes, g.edges)
    if g.n_nodes > 1:
        ev = np.linalg.eigvalsh(L)
        assert is_connected(g) == (ev[1] > 1e-9 * max(1.0, ev[-1]))


@settings(max_examples=100, deadline=None)
@given(connected_graphs())
def test_spectrum_invariants(g):
    sp = spectrum(g)
    U, lam, L = sp.diagonalizer, sp.eigenvalues, sp.laplacian
    N = g.n_nodes
    assert np.allclose(U.T @ U, np.eye(N), atol=1e-10)
    assert np.allclose(U @ np.diag(lam) @ U.T, L, atol=1e-10)
    assert np.allclose(U[:, 0], 1 / np.sqrt(N))
    assert np.all(np.diff(lam) >= -1e-12)
    assert np.allclose(U.T @ consensus_projector(N) @ U, np.diag([0.0] + [1.0] * (N - 1)), atol=1e-10)
    assert np.abs(U @ np.diag(lam) @ U.T @ np.ones(N)).max() <= 1e-12 * max(1, N)
    for k in range(1, N):
        col = U[:, k]
        assert col[np.argmax(np.abs(col))] > 0
    if N > 1:
        assert sp.lambda2 > 0
