"""Training: BPR + weighted alignment + L2, Adam, early stopping on
validation Recall@20, and the backbone pretraining mode."""

import copy
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from egra.alignment import AlignmentSchedule, BatchView, batch_alignment_loss
from egra.dataset import epoch_batches
from egra.errors import TrainingDivergence
from egra.evaluator import evaluate
from egra.formats import ensure_dir, read_matrix, write_matrix
from egra.model import EGRAModel, Graphs, feature_tensors

log = logging.getLogger(__name__)

ABLATIONS = ("none", "ebg", "bda", "en", "ep")


@dataclass(frozen=True)
class Ablation:
    """Which components are switched off."""

    ebg: bool = False
    en: bool = False
    ep: bool = False

    @classmethod
    def named(cls, name):
        name = (name or "none").lower()
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
        if name == "bda":
            return cls(en=True, ep=True)
        return cls(**{name: True}) if name != "none" else cls()


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 2048
    dim: int = 64
    layers: int = 3
    semantic_layers: int = 1
    reg_weight: float = 1e-4
    knn_k: int = 10
    neighbors: int = 5
    patience: int = 20
    max_epochs: int = 1000
    seed: int = 0
    schedule: AlignmentSchedule = field(default_factory=AlignmentSchedule)
    ablation: Ablation = field(default_factory=Ablation)

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = AlignmentSchedule(**self.schedule)
        if isinstance(self.ablation, str):
            self.ablation = Ablation.named(self.ablation)
        elif isinstance(self.ablation, dict):
            self.ablation = Ablation(**self.ablation)
        if self.lr <= 0 or self.batch_size < 1 or self.dim < 1:
            raise ValueError("learning rate, batch size and dimension must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")

    def to_dict(self):
        return asdict(self)


def score(table, user, item, num_users):
    return table[user] @ table[num_users + item]


def bpr_loss(pos_scores, neg_scores):
    """Mean of ``-log sigmoid(pos - neg)``, written as ``softplus(neg - pos)``."""
    return F.softplus(neg_scores - pos_scores).mean()


def l2_penalty(table, triples, num_users):
    """Squared Frobenius norm of the batch-touched rows, per triple."""
    u = table[triples[:, 0]]
    i = table[num_users + triples[:, 1]]
    j = table[num_users + triples[:, 2]]
    return (u.pow(2).sum() + i.pow(2).sum() + j.pow(2).sum()) / len(triples)


def total_loss(triples, out, epoch, config, num_users, align_weights=None):
    """BPR + alignment + L2 terms for one batch of ``(user, pos, neg)`` triples.

    Returns a dict with ``total``, ``bpr``, ``align`` and ``reg`` tensors.
    ``align_weights`` pins the alignment weights (they carry no gradient).
    """
    triples = torch.as_tensor(np.asarray(triples), dtype=torch.long)
    table = out.final
    users = table[triples[:, 0]]
    pos = (users * table[num_users + triples[:, 1]]).sum(-1)
    neg = (users * table[num_users + triples[:, 2]]).sum(-1)
    l_bpr = bpr_loss(pos, neg)
    view = BatchView.from_pairs(triples[:, :2].numpy(), out.behavior, out.modality, num_users)
    abl = config.ablation
    l_align = batch_alignment_loss(view, config.schedule, epoch,
                                   entity_weighting=not abl.en, epoch_weighting=not abl.ep,
                                   weights=align_weights)
    reg = l2_penalty(table, triples, num_users)
    total = l_bpr + l_align + config.reg_weight * reg
    if not torch.isfinite(total):
        raise TrainingDivergence(
            f"non-finite loss at epoch {epoch}: bpr={l_bpr.item()} align={l_align.item()} reg={reg.item()}"
        )
    return {"total": total, "bpr": l_bpr, "align": l_align, "reg": reg}


@dataclass
class FitResult:
    model: EGRAModel
    history: list
    best_epoch: int
    best_valid: float

    def final_table(self, graphs, features):
        self.model.eval()
        with torch.no_grad():
            return self.model(graphs, features).final


def build_model(ds, features, config):
    return EGRAModel(ds.num_users, ds.num_items, {m: f.shape[1] for m, f in features.items()},
                     dim=config.dim, layers=config.layers, semantic_layers=config.semantic_layers)


def fit(ds, features, graphs, config, history_path=None):
    """Train a fresh model and return the best-validation checkpoint.

    Each epoch walks every train pair once (shuffled) with one uniform
    negative per positive, then scores validation Recall@20. Training stops
    after ``patience`` epochs without improvement.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    features = feature_tensors(features)
    model = build_model(ds, features, config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    has_valid = len(ds.valid) > 0
    if not has_valid:
        warnings.warn("empty validation split; training for max_epochs without early stopping")
    history = []
    best_valid, best_epoch, best_state, stale = -1.0, -1, None, 0
    hist_fh = open(history_path, "w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(config.max_epochs):
            t0 = time.perf_counter()
            model.train()
            sums = {"bpr": 0.0, "align": 0.0, "reg": 0.0}
            n_batches = 0
            for triples in epoch_batches(ds, config.batch_size, rng):
                out = model(graphs, features)
                terms = total_loss(triples, out, epoch, config, ds.num_users)
                opt.zero_grad()
                terms["total"].backward()
                opt.step()
                for k in sums:
                    sums[k] += terms[k].item()
                n_batches += 1
            model.eval()
            with torch.no_grad():
                table = model(graphs, features).final
            if not torch.isfinite(table).all():
                raise TrainingDivergence(f"non-finite embeddings after epoch {epoch}")
            valid = evaluate(table, ds, (20,), split="valid")["recall@20"] if has_valid else float("nan")
            record = {"epoch": epoch, **{k: v / max(n_batches, 1) for k, v in sums.items()},
                      "valid_recall@20": valid, "seconds": time.perf_counter() - t0}
            history.append(record)
            if hist_fh:
                hist_fh.write(json.dumps(record) + "\n")
            log.debug("epoch %d bpr %.4f align %.4f valid R@20 %.4f",
                      epoch, record["bpr"], record["align"], valid)
            if not has_valid or valid > best_valid:
                best_valid, best_epoch, stale = valid, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
                if stale >= config.patience:
                    break
    finally:
        if hist_fh:
            hist_fh.close()
    model.load_state_dict(best_state)
    model.eval()
    return FitResult(model, history, best_epoch, best_valid)


def train(ds, features, config, item_graph=None, history_path=None):
    """Build graphs (``item_graph=None`` or the EBG ablation gives the plain
    bipartite graph) and fit."""
    if config.ablation.ebg:
        item_graph = None
    graphs = Graphs.build(ds.R, features, item_graph, knn_k=config.knn_k)
    result = fit(ds, features, graphs, config, history_path=history_path)
    return result, graphs


def pretrain_backbone(ds, features, config, out_path=None):
    """Train the ablated model (plain graph, uniform entity weights, constant
    epoch weight) and return its final item embeddings ``(|I|, d)``."""
    cfg = replace(config, ablation=Ablation(ebg=True, en=True, ep=True))
    result, graphs = train(ds, features, cfg)
    table = result.final_table(graphs, feature_tensors(features))
    items = table[ds.num_users:].numpy().astype(np.float32)
    if out_path:
        write_matrix(out_path, items)
    return items


def load_or_pretrain(ds, features, config, embeddings_path=None):
    """Use an external embedding file when given; otherwise pretrain."""
    if embeddings_path:
        return read_matrix(embeddings_path)
    return pretrain_backbone(ds, features, config)


def save_checkpoint(model, directory):
    """One feature file per tensor plus a ``manifest.txt`` index."""
    ensure_dir(directory)
    lines = []
    for k, (name, tensor) in enumerate(model.state_dict().items()):
        fname = f"tensor{k:03d}.egraf"
        mat = tensor.detach().numpy()
        write_matrix(f"{directory}/{fname}", mat.reshape(mat.shape[0] if mat.ndim else 1, -1))
        lines.append(f"{name}\t{fname}\t{'x'.join(map(str, mat.shape))}")
    with open(f"{directory}/manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(model, directory):
    state = {}
    with open(f"{directory}/manifest.txt", encoding="utf-8") as fh:
        for line in fh:
            name, fname, shape = line.rstrip("\n").split("\t")
            dims = tuple(int(s) for s in shape.split("x")) if shape else ()
            state[name] = torch.from_numpy(read_matrix(f"{directory}/{fname}").reshape(dims))
    model.load_state_dict(state)
    return model
