import numpy as np
import pytest
import scipy.sparse as sp

from egra.formats import write_graph
from egra.knn_graph import (
    build_enhanced_adjacency,
    build_gume_comparator_graph,
    sym_normalize,
    topk_binary_graph,
    topk_neighbors,
    topk_weighted_graph,
)
from oracles import topk_edges_py, union_py


def _edges(adj):
    coo = sp.coo_matrix(adj)
    return {(int(i), int(j)): float(w) for i, j, w in zip(coo.row, coo.col, coo.data)}


def test_identical_rows_link_to_lowest_id():
    graph = topk_binary_graph(np.ones((3, 5)), 1, symmetric=False)
    assert set(_edges(graph)) == {(0, 1), (1, 0), (2, 0)}
    sym = topk_binary_graph(np.ones((3, 5)), 1)
    assert sym[0].nnz == 2


def test_orthogonal_rows_use_id_tiebreak():
    graph = topk_binary_graph(np.eye(3), 1, symmetric=False)
    assert set(_edges(graph)) == {(0, 1), (1, 0), (2, 0)}


def test_zero_row_never_beats_positive_similarity():
    x = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.1]])
    idx, val = topk_neighbors(x, 1)
    assert idx[0, 0] == 2 and idx[2, 0] == 0
    assert val[1, 0] == 0.0


def test_neighbor_count_bounds():
    with pytest.raises(ValueError):
        topk_binary_graph(np.eye(3), 3)
    with pytest.raises(ValueError):
        topk_binary_graph(np.eye(3), 0)


def test_weighted_identical_rows_weight_one():
    graph = topk_weighted_graph(np.array([[1.0, 2.0], [1.0, 2.0]]), 1)
    np.testing.assert_allclose(graph.toarray(), [[0, 1], [1, 0]], rtol=1e-6)


def test_weighted_orthogonal_keeps_zero_edge():
    graph = topk_weighted_graph(np.array([[1.0, 0.0], [0.0, 1.0]]), 1)
    assert _edges(graph) == {(0, 1): 0.0, (1, 0): 0.0}


@pytest.mark.parametrize("seed", range(5))
def test_weighted_matches_bruteforce(seed):
    x = np.random.default_rng(seed).normal(size=(4, 3))
    oracle = union_py(topk_edges_py(x, 2))
    got = _edges(topk_weighted_graph(x, 2))
    assert set(got) == set(oracle)
    for key, w in oracle.items():
        assert got[key] == pytest.approx(w, abs=1e-6)


def test_row_sparsity_before_symmetrization(rng):
    x = rng.normal(size=(30, 6))
    for k in (1, 3, 7):
        assert (np.diff(topk_binary_graph(x, k, symmetric=False).indptr) == k).all()
        assert (np.diff(topk_weighted_graph(x, k, symmetric=False).indptr) == k).all()


def test_weighted_graph_is_exactly_symmetric(rng):
    graph = topk_weighted_graph(rng.normal(size=(40, 5)), 4)
    assert (graph != graph.T).nnz == 0


def test_sym_normalize_single_edge():
    adj = sp.csr_matrix([[0, 1.0], [1.0, 0]])
    np.testing.assert_allclose(sym_normalize(adj).toarray(), [[0, 1], [1, 0]])


def test_sym_normalize_regular_graph():
    n, k = 8, 2
    adj = np.zeros((n, n))
    for i in range(n):
        adj[i, (i + 1) % n] = adj[i, (i - 1) % n] = 1
    norm = sym_normalize(sp.csr_matrix(adj))
    np.testing.assert_allclose(norm.data, 1 / k)


def test_sym_normalize_star():
    adj = np.zeros((5, 5))
    adj[0, 1:] = adj[1:, 0] = 1
    norm = sym_normalize(sp.csr_matrix(adj)).toarray()
    # hub degree 4, leaf degree 1: 1/sqrt(4*1)
    np.testing.assert_allclose(norm[0, 1:], 0.5)
    np.testing.assert_allclose(norm[1:, 0], 0.5)


def test_sym_normalize_isolated_row_is_zero():
    adj = sp.csr_matrix([[0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]])
    assert sym_normalize(adj)[2].nnz == 0


def test_sym_normalize_rejects_negative():
    with pytest.raises(ValueError):
        sym_normalize(sp.csr_matrix([[0, -1.0], [-1.0, 0]]))


@pytest.mark.parametrize("seed", range(5))
def test_sym_normalize_spectral_radius(seed):
    r = np.random.default_rng(seed)
    a = r.random((12, 12)) * (r.random((12, 12)) < 0.4)
    a = a + a.T + np.diag(np.ones(11), 1) + np.diag(np.ones(11), -1)
    eig = np.linalg.eigvalsh(sym_normalize(sp.csr_matrix(a)).toarray())
    assert np.abs(eig).max() <= 1 + 1e-9


def test_enhanced_adjacency_blocks():
    R = sp.csr_matrix([[1.0, 0.0]])
    S = sp.csr_matrix([[0, 1.0], [1.0, 0]])
    g = build_enhanced_adjacency(R, S)
    assert set(_edges(g)) == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_enhanced_adjacency_without_items_is_bipartite(rng):
    R = sp.csr_matrix((rng.random((6, 9)) < 0.3).astype(float))
    g = build_enhanced_adjacency(R).toarray()
    np.testing.assert_array_equal(g[:6, 6:], R.toarray())
    np.testing.assert_array_equal(g[6:, :6], R.toarray().T)
    assert not g[:6, :6].any() and not g[6:, 6:].any()


def test_enhanced_adjacency_nnz_and_symmetry(rng):
    R = sp.csr_matrix((rng.random((10, 15)) < 0.2).astype(float))
    S = topk_binary_graph(rng.normal(size=(15, 4)), 3)
    g = build_enhanced_adjacency(R, S)
    assert g.nnz == 2 * R.nnz + S.nnz
    assert (g != g.T).nnz == 0


def test_enhanced_adjacency_shape_mismatch():
    with pytest.raises(Exception):
        build_enhanced_adjacency(sp.csr_matrix(np.ones((2, 3))), sp.csr_matrix(np.ones((2, 2))))


def test_gume_disjoint_and_identical():
    a = sp.csr_matrix([[0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]])
    b = sp.csr_matrix([[0, 0, 1.0], [0, 0, 0], [1.0, 0, 0]])
    assert build_gume_comparator_graph(a, b).nnz == 0
    same = build_gume_comparator_graph(a * 0.3, a)
    assert _edges(same) == {(0, 1): 1.0, (1, 0): 1.0}


@pytest.mark.parametrize("seed", range(5))
def test_gume_matches_set_intersection(seed):
    r = np.random.default_rng(seed)
    a = topk_weighted_graph(r.normal(size=(20, 4)), 3)
    b = topk_weighted_graph(r.normal(size=(20, 4)), 3)
    got = set(_edges(build_gume_comparator_graph(a, b)))
    assert got == set(_edges(a)) & set(_edges(b))


def test_graph_construction_bytes_deterministic(tmp_path, rng):
    x = rng.normal(size=(25, 8))
    for k in range(2):
        write_graph(tmp_path / f"g{k}", topk_binary_graph(x, 5))
    assert (tmp_path / "g0").read_bytes() == (tmp_path / "g1").read_bytes()
