"""Shared/exclusive modality fusion gated by behavioral preference."""

import torch
from torch import nn


class AttentionParams(nn.Module):
    """Attention shared by all modalities: ``tanh(E W + b) v``."""

    def __init__(self, dim):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim, dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.vector = nn.Parameter(torch.empty(dim))
        nn.init.xavier_uniform_(self.weight)
        # small random query so the modality softmax does not start flat
        nn.init.normal_(self.vector, std=0.1)


class PreferenceGate(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim, dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        nn.init.xavier_uniform_(self.weight)


def attention_score(reps, params):
    return torch.tanh(reps @ params.weight + params.bias) @ params.vector


def modality_softmax(reps, params):
    """Per-entity softmax over modalities; shape ``(|M|, n)``."""
    scores = torch.stack([attention_score(r, params) for r in reps])
    return torch.softmax(scores, dim=0)


def shared_representation(reps, params):
    weights = modality_softmax(reps, params)
    return sum(w.unsqueeze(-1) * r for w, r in zip(weights, reps))


def preference_gate(behavior, gate):
    return torch.sigmoid(behavior @ gate.weight + gate.bias)


def fuse_modalities(shared, reps, gates):
    """``(E_s + sum_m P_m * (E_m - E_s)) / (|M| + 1)``.

    The result is scaled by ``1/(|M|+1)`` and is not a convex combination.
    """
    total = shared
    for rep, gate in zip(reps, gates):
        total = total + gate * (rep - shared)
    return total / (len(reps) + 1)


def final_fuse(behavior, modality):
    return behavior + modality
