"""Top-K cosine item graphs, symmetric normalization and the enhanced
behavior adjacency.

Graphs are ``scipy.sparse.csr_matrix`` objects throughout.
"""

import numpy as np
import scipy.sparse as sp

from egra.errors import ShapeError

CHUNK_ROWS = 1024


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # zero rows stay zero, so their cosine with anything is 0
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def topk_neighbors(x, k, chunk_rows=CHUNK_ROWS):
    """Indices and cosine values of the ``k`` most similar other rows.

    Self-similarity is excluded and ties go to the lower item id. Returns two
    ``(n, k)`` arrays. Similarities are computed a block of rows at a time.
    """
    x = np.asarray(x)
    n = x.shape[0]
    if k < 1 or k >= n:
        raise ValueError(f"neighbor count must satisfy 1 <= k < {n}, got {k}")
    unit = _unit_rows(x)
    idx = np.empty((n, k), dtype=np.int64)
    val = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, chunk_rows):
        stop = min(start + chunk_rows, n)
        sim = unit[start:stop] @ unit.T
        rows = np.arange(stop - start)
        sim[rows, rows + start] = -np.inf
        # stable sort on -sim keeps ascending id order among equal values
        order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        idx[start:stop] = order
        val[start:stop] = np.take_along_axis(sim, order, axis=1)
    return idx, val


def _directed(idx, val, n):
    rows = np.repeat(np.arange(n), idx.shape[1])
    return sp.csr_matrix((val.ravel(), (rows, idx.ravel())), shape=(n, n))


def symmetrize_union(adj):
    """Keep an edge if either endpoint selected it.

    Both orientations of a pair get the same value: the one stored for the
    first occurrence of the unordered pair.
    """
    coo = sp.coo_matrix(adj)
    n = coo.shape[0]
    r = coo.row.astype(np.int64)
    c = coo.col.astype(np.int64)
    canon = np.minimum(r, c) * n + np.maximum(r, c)
    pairs, first = np.unique(canon, return_index=True)
    lo, hi = pairs // n, pairs % n
    vals = coo.data[first]
    off = lo != hi
    rows = np.concatenate([lo, hi[off]])
    cols = np.concatenate([hi, lo[off]])
    out = sp.csr_matrix((np.concatenate([vals, vals[off]]), (rows, cols)), shape=(n, n))
    out.sort_indices()
    return out


def topk_binary_graph(embeddings, h=5, symmetric=True):
    """Item-item graph keeping the ``h`` nearest neighbors with weight 1."""
    idx, _ = topk_neighbors(embeddings, h)
    adj = _directed(idx, np.ones(idx.shape), idx.shape[0]).astype(np.float32)
    return symmetrize_union(adj) if symmetric else adj


def topk_weighted_graph(features, k=10, symmetric=True):
    """Item-item graph keeping the ``k`` nearest neighbors, weighted by cosine."""
    idx, val = topk_neighbors(features, k)
    adj = _directed(idx, val, idx.shape[0])
    # explicit zeros are real selected edges; keep them in the structure
    adj = sp.csr_matrix((adj.data.astype(np.float32), adj.indices, adj.indptr), shape=adj.shape)
    return symmetrize_union(adj) if symmetric else adj


def clip_negative(adj):
    adj = sp.csr_matrix(adj, copy=True)
    np.maximum(adj.data, 0, out=adj.data)
    return adj


def sym_normalize(adj):
    """Return ``D^-1/2 A D^-1/2`` using weighted row degrees.

    Rows with zero degree come out as all-zero rows.
    """
    adj = sp.csr_matrix(adj, dtype=np.float64)
    if adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    if adj.nnz and adj.data.min() < 0:
        raise ValueError("adjacency has negative weights")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    np.power(deg, -0.5, out=inv, where=deg > 0)
    d = sp.diags(inv)
    return sp.csr_matrix(d @ adj @ d)


def bipartite_normalize(R):
    """``D_u^-1/2 R D_i^-1/2`` for a rectangular user-item matrix."""
    R = sp.csr_matrix(R, dtype=np.float64)
    du = np.asarray(R.sum(axis=1)).ravel()
    di = np.asarray(R.sum(axis=0)).ravel()
    iu = np.zeros_like(du)
    ii = np.zeros_like(di)
    np.power(du, -0.5, out=iu, where=du > 0)
    np.power(di, -0.5, out=ii, where=di > 0)
    return sp.csr_matrix(sp.diags(iu) @ R @ sp.diags(ii))


def build_enhanced_adjacency(R, item_graph=None):
    """Block matrix ``[[0, R], [R^T, S]]`` over users followed by items.

    ``item_graph=None`` gives the plain bipartite interaction graph.
    """
    R = sp.csr_matrix(R, dtype=np.float32)
    n_users, n_items = R.shape
    if item_graph is None:
        item_graph = sp.csr_matrix((n_items, n_items), dtype=np.float32)
    item_graph = sp.csr_matrix(item_graph, dtype=np.float32)
    if item_graph.shape != (n_items, n_items):
        raise ShapeError(f"item graph {item_graph.shape} does not match {n_items} items")
    top = sp.hstack([sp.csr_matrix((n_users, n_users), dtype=np.float32), R])
    bottom = sp.hstack([R.T, item_graph])
    out = sp.vstack([top, bottom]).tocsr()
    out.sort_indices()
    return out


def build_gume_comparator_graph(graph_a, graph_b):
    """Binary graph of the edges present in both modality graphs."""
    a = sp.csr_matrix(graph_a)
    b = sp.csr_matrix(graph_b)
    if a.shape != b.shape:
        raise ShapeError(f"graphs differ in shape: {a.shape} vs {b.shape}")
    a = sp.csr_matrix((np.ones(a.nnz, dtype=np.float32), a.indices, a.indptr), shape=a.shape)
    b = sp.csr_matrix((np.ones(b.nnz, dtype=np.float32), b.indices, b.indptr), shape=b.shape)
    out = a.multiply(b).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def modality_graph(features, k=10):
    """Normalized semantic graph for one modality, ready for propagation."""
    return sym_normalize(clip_negative(topk_weighted_graph(features, k)))
