"""LightGCN propagation of ID embeddings over the (enhanced) behavior graph."""

import numpy as np
import scipy.sparse as sp
import torch

from egra.errors import ShapeError


def to_sparse_tensor(adj, dtype=torch.float32):
    """Convert a scipy sparse matrix to a coalesced torch COO tensor."""
    if isinstance(adj, torch.Tensor):
        return adj.to(dtype)
    coo = sp.coo_matrix(adj)
    indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    values = torch.from_numpy(coo.data).to(dtype)
    return torch.sparse_coo_tensor(indices, values, coo.shape).coalesce()


def propagate_lightgcn(embeddings, adj, layers):
    """Mean of ``E, A E, ..., A^L E`` for a normalized adjacency ``A``."""
    if layers < 0:
        raise ValueError("layer count must be non-negative")
    adj = to_sparse_tensor(adj, embeddings.dtype)
    if adj.shape[1] != embeddings.shape[0] or adj.shape[0] != embeddings.shape[0]:
        raise ShapeError(f"adjacency {tuple(adj.shape)} does not match embeddings {tuple(embeddings.shape)}")
    total = embeddings
    layer = embeddings
    for _ in range(layers):
        layer = torch.sparse.mm(adj, layer)
        total = total + layer
    return total / (layers + 1)
