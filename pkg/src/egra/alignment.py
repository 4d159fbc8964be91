"""Bi-level dynamic alignment weighting and the interaction-aware
behavior/modality contrastive loss."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class AlignmentSchedule:
    lambda_min: float = 0.01
    lambda_max: float = 0.04
    warmup: int = 10
    tau1: float = 1.0
    tau2: float = 0.2
    tau3: float = 0.2

    def __post_init__(self):
        if not 0 <= self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 <= lambda_min <= lambda_max")
        if self.warmup < 1:
            raise ValueError("warmup must be at least one epoch")
        if min(self.tau1, self.tau2, self.tau3) <= 0:
            raise ValueError("temperatures must be positive")


def cosine(a, b):
    """Row-wise cosine; a zero row has cosine 0 with everything."""
    return (F.normalize(a, dim=-1) * F.normalize(b, dim=-1)).sum(-1)


def cosine_matrix(a, b):
    return F.normalize(a, dim=-1) @ F.normalize(b, dim=-1).T


def entity_weights(behavior, modality, tau1):
    """Softmax over the batch of ``(1 - cos(e_B, e_M)) / tau1``.

    Poorly aligned entities get larger weights. The weights are treated as
    constants: no gradient flows through them.
    """
    with torch.no_grad():
        misalign = 1.0 - cosine(behavior, modality)
        return torch.softmax(misalign / tau1, dim=0)


def epoch_weight(epoch, schedule):
    if epoch >= schedule.warmup:
        return schedule.lambda_max
    span = schedule.lambda_max - schedule.lambda_min
    return schedule.lambda_min + epoch / schedule.warmup * span


def combined_weight(entity_w, epoch_w):
    return entity_w * epoch_w


def phi(e1, e2, e3, tau):
    return torch.exp(cosine(e1, e3) / tau) + torch.exp(cosine(e2, e3) / tau)


def side_losses(own_b, own_m, other_fused, own_idx, other_idx, tau2, tau3):
    """Per-pair alignment losses for one entity type.

    ``own_b``/``own_m`` hold the behavior/modality rows of the unique entities
    on this side of the batch, ``other_fused`` the fused anchors of the
    counterpart side. Pair ``k`` links ``own_idx[k]`` to ``other_idx[k]``.
    Computed in log space: ``logsumexp(denominator) - logsumexp(numerator)``.
    """
    own_idx = torch.as_tensor(own_idx, dtype=torch.long)
    other_idx = torch.as_tensor(other_idx, dtype=torch.long)
    direct = cosine_matrix(own_b, own_m) / tau2
    via_b = cosine_matrix(own_b, other_fused) / tau3
    via_m = cosine_matrix(own_m, other_fused) / tau3
    log_den = torch.logsumexp(torch.cat([direct, via_b, via_m], dim=1), dim=1)
    num_terms = torch.stack([
        direct[own_idx, own_idx],
        via_b[own_idx, other_idx],
        via_m[own_idx, other_idx],
    ])
    log_num = torch.logsumexp(num_terms, dim=0)
    return log_den[own_idx] - log_num


@dataclass
class BatchView:
    """Unique users/items of a batch plus their behavior and modality rows.

    ``pair_user``/``pair_item`` index into ``users``/``items`` and list the
    positive interactions of the batch.
    """

    users: np.ndarray
    items: np.ndarray
    pair_user: np.ndarray
    pair_item: np.ndarray
    user_b: torch.Tensor
    user_m: torch.Tensor
    item_b: torch.Tensor
    item_m: torch.Tensor

    @classmethod
    def from_pairs(cls, pairs, behavior, modality, num_users):
        """Gather rows for ``pairs`` (``(n, 2)`` user/item ids) from full
        ``(|U|+|I|, d)`` behavior and modality tables."""
        pairs = np.asarray(pairs)
        users, pair_user = np.unique(pairs[:, 0], return_inverse=True)
        items, pair_item = np.unique(pairs[:, 1], return_inverse=True)
        u = torch.as_tensor(users, dtype=torch.long)
        i = torch.as_tensor(items + num_users, dtype=torch.long)
        return cls(users, items, pair_user, pair_item,
                   behavior[u], modality[u], behavior[i], modality[i])

    @property
    def user_fused(self):
        return (self.user_b + self.user_m) / 2

    @property
    def item_fused(self):
        return (self.item_b + self.item_m) / 2


def user_alignment_losses(batch, tau2, tau3):
    return side_losses(batch.user_b, batch.user_m, batch.item_fused,
                       batch.pair_user, batch.pair_item, tau2, tau3)


def item_alignment_losses(batch, tau2, tau3):
    return side_losses(batch.item_b, batch.item_m, batch.user_fused,
                       batch.pair_item, batch.pair_user, tau2, tau3)


def user_alignment_loss(batch, pair, tau2, tau3):
    """Alignment loss of the user in positive pair number ``pair``."""
    if len(batch.pair_user) == 0:
        raise ValueError("empty batch")
    return user_alignment_losses(batch, tau2, tau3)[pair]


def side_weights(b, m, schedule, epoch, entity_weighting=True, epoch_weighting=True):
    n = b.shape[0]
    if entity_weighting:
        w = entity_weights(b, m, schedule.tau1)
    else:
        w = torch.full((n,), 1.0 / n, dtype=b.dtype)
    lam = epoch_weight(epoch, schedule) if epoch_weighting else schedule.lambda_max
    return combined_weight(w, lam)


def batch_weights(batch, schedule, epoch, entity_weighting=True, epoch_weighting=True):
    """Combined per-entity weights ``(users, items)`` for one batch."""
    return (side_weights(batch.user_b, batch.user_m, schedule, epoch, entity_weighting, epoch_weighting),
            side_weights(batch.item_b, batch.item_m, schedule, epoch, entity_weighting, epoch_weighting))


def batch_alignment_loss(batch, schedule, epoch, entity_weighting=True, epoch_weighting=True,
                         weights=None):
    """Weighted user-side plus item-side alignment loss for one batch.

    Every positive pair contributes one term on each side, weighted by the
    combined weight of the entity the term belongs to. ``weights`` overrides
    the computed ``(users, items)`` weights.
    """
    if len(batch.pair_user) == 0:
        raise ValueError("empty batch")
    if weights is None:
        weights = batch_weights(batch, schedule, epoch, entity_weighting, epoch_weighting)
    w_u, w_i = weights
    lu = user_alignment_losses(batch, schedule.tau2, schedule.tau3)
    li = item_alignment_losses(batch, schedule.tau2, schedule.tau3)
    pu = torch.as_tensor(batch.pair_user, dtype=torch.long)
    pi = torch.as_tensor(batch.pair_item, dtype=torch.long)
    return (w_u[pu] * lu).sum() + (w_i[pi] * li).sum()
