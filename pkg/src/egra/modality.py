"""Modality branch: feature projection, behavior purification, semantic
graph propagation and user aggregation."""

import torch
from torch import nn

from egra.behavior import to_sparse_tensor
from egra.errors import ShapeError


class ModalityProjector(nn.Module):
    """Two stacked affine maps followed by a sigmoid, ``d_m -> d -> d``.

    There is no nonlinearity between the two layers.
    """

    def __init__(self, in_dim, dim):
        super().__init__()
        self.first = nn.Linear(in_dim, dim)
        self.second = nn.Linear(dim, dim)
        for layer in (self.first, self.second):
            nn.init.xavier_uniform_(layer.weight)
            nn.init.zeros_(layer.bias)

    def forward(self, features):
        return torch.sigmoid(self.second(self.first(features)))


def project_modality(features, projector):
    if features.shape[-1] != projector.first.in_features:
        raise ShapeError(
            f"features have width {features.shape[-1]}, projector expects {projector.first.in_features}"
        )
    return projector(features)


def purify(projected, behavior_items):
    return projected * behavior_items


def semantic_propagate(x, graph, layers):
    """Apply the normalized item graph ``layers`` times; return the last layer."""
    if layers < 1:
        raise ValueError("semantic propagation needs at least one layer")
    graph = to_sparse_tensor(graph, x.dtype)
    if graph.shape[1] != x.shape[0]:
        raise ShapeError(f"graph {tuple(graph.shape)} does not match item matrix {tuple(x.shape)}")
    for _ in range(layers):
        x = torch.sparse.mm(graph, x)
    return x


def aggregate_user_modality(item_reps, norm_interactions):
    """User rows as the bipartite-normalized sum of their items' rows.

    ``norm_interactions`` is ``D_u^-1/2 R D_i^-1/2`` (see
    :func:`egra.knn_graph.bipartite_normalize`).
    """
    norm_interactions = to_sparse_tensor(norm_interactions, item_reps.dtype)
    return torch.sparse.mm(norm_interactions, item_reps)
