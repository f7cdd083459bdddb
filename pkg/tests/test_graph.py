import numpy as np
import pytest

from cgnn.graph import (
    Graph,
    GraphError,
    PropagationOperator,
    build_sym_norm,
    load_edge_list,
    regularize,
)

from graph_fixtures import random_graph


def test_two_node_path_normalization():
    s = build_sym_norm(Graph(2, [(0, 1)]))
    assert np.allclose(s.to_dense(), [[0, 1], [1, 0]])


def test_triangle_normalization():
    s = build_sym_norm(Graph(3, [(0, 1), (1, 2), (0, 2)]))
    expected = 0.5 * (np.ones((3, 3)) - np.eye(3))
    assert np.allclose(s.to_dense(), expected)


def test_isolated_node_zero_row():
    s = build_sym_norm(Graph(3, [(0, 1)]))
    dense = s.to_dense()
    assert np.all(dense[2] == 0) and np.all(dense[:, 2] == 0)
    assert dense[0, 1] == 1.0


def test_graph_rejects_self_loop_and_duplicates_and_range():
    with pytest.raises(GraphError):
        Graph(3, [(1, 1)])
    with pytest.raises(GraphError):
        Graph(3, [(0, 1), (1, 0)])
    with pytest.raises(GraphError):
        Graph(2, [(0, 5)])


def test_from_edges_symmetrizes_and_dedupes():
    g = Graph.from_edges(3, [(0, 1), (1, 0), (2, 1), (1, 2)])
    assert g.edges == [(0, 1), (1, 2)]


def test_regularize_eq2_recovery():
    s = build_sym_norm(Graph(2, [(0, 1)]))
    op = regularize(s, np.array([0.5, 0.5]), 0.5)
    assert np.allclose(op.to_dense(), [[0.25, 0.25], [0.25, 0.25]])


def test_regularize_single_node():
    s = build_sym_norm(Graph(1, []))
    op = regularize(s, np.array([0.9]), 0.5)
    assert np.allclose(op.to_dense(), [[0.45]])


def test_regularize_per_node_alpha():
    # hand evaluation of diag(alpha) (gamma I + (1-gamma) S) on the 2-path
    s = build_sym_norm(Graph(2, [(0, 1)]))
    op = regularize(s, np.array([0.4, 0.8]), 0.5)
    assert np.allclose(op.to_dense(), [[0.2, 0.2], [0.4, 0.4]])


def test_regularize_rejects_out_of_range():
    s = build_sym_norm(Graph(2, [(0, 1)]))
    with pytest.raises(GraphError):
        regularize(s, np.array([1.0, 0.5]), 0.5)
    with pytest.raises(GraphError):
        regularize(s, np.array([0.5, 0.5]), 1.0)
    with pytest.raises(GraphError):
        regularize(s, np.array([0.5]), 0.5)


def test_apply_scaled_identity():
    s = build_sym_norm(Graph(3, []))
    op = PropagationOperator(base=s, alpha=np.full(3, 0.8), gamma=0.625)
    h = np.arange(6.0).reshape(3, 2)
    assert np.allclose(op.apply(h), 0.5 * h)


def test_apply_two_node_path():
    op = regularize(build_sym_norm(Graph(2, [(0, 1)])), np.array([0.5, 0.5]), 0.5)
    assert np.allclose(op.apply(np.array([[1.0], [0.0]])), [[0.25], [0.25]])
    assert np.allclose(op.apply(np.zeros((2, 1))), 0.0)


def test_apply_dimension_mismatch():
    op = regularize(build_sym_norm(Graph(2, [(0, 1)])), np.array([0.5, 0.5]), 0.5)
    with pytest.raises(GraphError):
        op.apply(np.zeros((3, 1)))


def test_symmetry_of_stored_triples(rng):
    for _ in range(5):
        g = random_graph(20, 0.2, rng)
        s = build_sym_norm(g)
        triples = set(zip(s.rows.tolist(), s.cols.tolist(), s.vals.tolist()))
        swapped = {(c, r, v) for r, c, v in triples}
        assert triples == swapped
        dense = s.to_dense()
        assert np.array_equal(dense, dense.T)


def test_spectral_bounds(rng):
    for n in (5, 20, 50):
        g = random_graph(n, 0.3, rng)
        s = build_sym_norm(g)
        eig_s = np.linalg.eigvalsh(s.to_dense())
        assert eig_s.min() >= -1 - 1e-10 and eig_s.max() <= 1 + 1e-10
        alpha = 0.9
        op = regularize(s, np.full(n, alpha), 0.5)
        eig_a = np.linalg.eigvalsh(op.to_dense())
        assert eig_a.min() >= -1e-10 and eig_a.max() <= alpha + 1e-10


def test_per_node_alpha_spectral_radius(rng):
    for _ in range(5):
        n = 30
        g = random_graph(n, 0.2, rng)
        alpha = rng.uniform(0.2, 0.99, n)
        op = regularize(build_sym_norm(g), alpha, rng.uniform(0.2, 0.8))
        eigs = np.linalg.eigvals(op.to_dense())
        assert np.max(np.abs(eigs)) <= alpha.max() + 1e-10
        # similarity to the symmetric sqrt-scaled form gives a real spectrum
        sym = np.sqrt(alpha)[:, None] * (op.to_dense() / alpha[:, None]) * np.sqrt(alpha)[None, :]
        assert np.allclose(np.sort(np.linalg.eigvalsh(sym)), np.sort(eigs.real), atol=1e-8)


def test_apply_matches_dense(rng):
    for _ in range(5):
        n = 50
        g = random_graph(n, 0.1, rng)
        op = regularize(build_sym_norm(g), rng.uniform(0.1, 0.9, n), 0.4)
        h = rng.standard_normal((n, 4))
        assert np.allclose(op.apply(h), op.to_dense() @ h, atol=1e-12)
        assert np.allclose(op.apply_transpose(h), op.to_dense().T @ h, atol=1e-12)


def test_load_edge_list(tmp_path):
    p = tmp_path / "graph.tsv"
    p.write_text("0\t1\n2\t0\n", encoding="utf-8")
    g = load_edge_list(p)
    assert g.num_nodes == 3 and g.edges == [(0, 1), (0, 2)]

    bad = tmp_path / "bad.tsv"
    bad.write_text("0 1\n", encoding="utf-8")
    with pytest.raises(GraphError, match="bad.tsv:1"):
        load_edge_list(bad)

    bad2 = tmp_path / "bad2.tsv"
    bad2.write_text("0\tx\n", encoding="utf-8")
    with pytest.raises(GraphError, match="bad2.tsv:1"):
        load_edge_list(bad2)
