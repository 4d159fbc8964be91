"""The full forward pipeline: behavior propagation, modality encoding,
disentangled fusion and the final sum."""

from dataclasses import dataclass

import torch
from torch import nn

from egra import knn_graph
from egra.behavior import propagate_lightgcn, to_sparse_tensor
from egra.fusion import (
    AttentionParams,
    PreferenceGate,
    final_fuse,
    fuse_modalities,
    preference_gate,
    shared_representation,
)
from egra.modality import (
    ModalityProjector,
    aggregate_user_modality,
    project_modality,
    purify,
    semantic_propagate,
)


@dataclass
class Graphs:
    """Frozen, normalized graphs consumed by the model (torch sparse)."""

    adjacency: torch.Tensor
    semantic: dict
    interactions: torch.Tensor

    @classmethod
    def build(cls, R, features, item_graph=None, knn_k=10, dtype=torch.float32):
        """Normalize the enhanced adjacency and build one semantic graph per
        modality from raw features.

        ``item_graph=None`` keeps the plain bipartite behavior graph.
        """
        adj = knn_graph.sym_normalize(knn_graph.build_enhanced_adjacency(R, item_graph))
        semantic = {m: to_sparse_tensor(knn_graph.modality_graph(f, knn_k), dtype)
                    for m, f in features.items()}
        return cls(
            to_sparse_tensor(adj, dtype),
            semantic,
            to_sparse_tensor(knn_graph.bipartite_normalize(R), dtype),
        )

    def to(self, dtype):
        return Graphs(self.adjacency.to(dtype),
                      {m: g.to(dtype) for m, g in self.semantic.items()},
                      self.interactions.to(dtype))


@dataclass
class Forward:
    behavior: torch.Tensor
    modality: torch.Tensor
    final: torch.Tensor
    per_modality: dict


class EGRAModel(nn.Module):
    """All trainable state: ID embeddings, per-modality projectors, the shared
    attention and per-modality preference gates."""

    def __init__(self, num_users, num_items, modality_dims, dim=64, layers=3, semantic_layers=1):
        super().__init__()
        self.num_users = num_users
        self.num_items = num_items
        self.layers = layers
        self.semantic_layers = semantic_layers
        self.modalities = list(modality_dims)
        self.embedding = nn.Parameter(torch.empty(num_users + num_items, dim))
        nn.init.xavier_uniform_(self.embedding)
        self.projectors = nn.ModuleDict({m: ModalityProjector(d, dim) for m, d in modality_dims.items()})
        self.attention = AttentionParams(dim)
        self.gates = nn.ModuleDict({m: PreferenceGate(dim) for m in modality_dims})

    def forward(self, graphs, features):
        behavior = propagate_lightgcn(self.embedding, graphs.adjacency, self.layers)
        item_behavior = behavior[self.num_users:]
        reps = {}
        for m in self.modalities:
            x = purify(project_modality(features[m], self.projectors[m]), item_behavior)
            items = semantic_propagate(x, graphs.semantic[m], self.semantic_layers)
            users = aggregate_user_modality(items, graphs.interactions)
            reps[m] = torch.cat([users, items])
        rep_list = [reps[m] for m in self.modalities]
        shared = shared_representation(rep_list, self.attention)
        gates = [preference_gate(behavior, self.gates[m]) for m in self.modalities]
        modality = fuse_modalities(shared, rep_list, gates)
        return Forward(behavior, modality, final_fuse(behavior, modality), reps)


def feature_tensors(features, dtype=torch.float32):
    return {m: torch.as_tensor(f, dtype=dtype) for m, f in features.items()}
