"""Slow reference implementations used as independent test oracles."""

import math


def cosine_py(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def topk_edges_py(rows, k):
    """Directed top-k edge dict {(i, j): cosine} by exhaustive comparison."""
    rows = [list(map(float, r)) for r in rows]
    edges = {}
    for i, a in enumerate(rows):
        cands = [(-cosine_py(a, b), j) for j, b in enumerate(rows) if j != i]
        cands.sort()
        for neg, j in cands[:k]:
            edges[(i, j)] = -neg
    return edges


def union_py(edges):
    out = dict(edges)
    for (i, j), w in edges.items():
        out.setdefault((j, i), w)
    return out


def recall_py(ranked, relevant, k):
    return len(set(ranked[:k]) & set(relevant)) / len(set(relevant))


def ndcg_py(ranked, relevant, k):
    relevant = set(relevant)
    dcg = 0.0
    for pos, item in enumerate(ranked[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(pos + 1)
    idcg = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def user_loss_py(pair, pairs, beh, mod, tau2, tau3):
    """Alignment loss of the user in ``pairs[pair]``, written out term by term.

    ``beh``/``mod`` map ``("u", id)`` / ``("i", id)`` to plain lists.
    """
    u, i = pairs[pair]
    users = sorted({p[0] for p in pairs})
    items = sorted({p[1] for p in pairs})

    def fused(key):
        return [(a + b) / 2 for a, b in zip(beh[key], mod[key])]

    def phi(e1, e2, e3, tau):
        return math.exp(cosine_py(e1, e3) / tau) + math.exp(cosine_py(e2, e3) / tau)

    bu, mu = beh[("u", u)], mod[("u", u)]
    num = math.exp(cosine_py(bu, mu) / tau2) + phi(bu, mu, fused(("i", i)), tau3)
    den = sum(math.exp(cosine_py(bu, mod[("u", v)]) / tau2) for v in users)
    den += sum(phi(bu, mu, fused(("i", j)), tau3) for j in items)
    return -math.log(num / den)


def central_differences(fn, params, eps=1e-4):
    """Numerical gradient of scalar ``fn()`` w.r.t. each tensor in ``params``.

    Each element is nudged in place; ``fn`` must re-read the tensors.
    """
    import torch

    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = fn().item()
                flat[k] = orig - eps
                down = fn().item()
                flat[k] = orig
                gflat[k] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def total_loss_gradient_errors(seed, num_users=6, num_items=8, dim=4, feat_dim=6):
    """Norm-wise relative error between autograd and central differences of
    the full training loss, per named parameter group, on a tiny float64
    instance with pinned alignment weights."""
    import numpy as np
    import torch

    from egra.alignment import AlignmentSchedule, BatchView, batch_weights
    from egra.dataset import InteractionDataset
    from egra.knn_graph import topk_binary_graph
    from egra.model import EGRAModel, Graphs, feature_tensors
    from egra.trainer import TrainConfig, total_loss

    rng = np.random.default_rng(seed)
    pairs = set()
    for u in range(num_users):
        for i in rng.choice(num_items, size=3, replace=False):
            pairs.add((u, int(i)))
    ds = InteractionDataset(num_users, num_items, np.array(sorted(pairs)))
    raw = {m: rng.normal(size=(num_items, feat_dim)) for m in ("visual", "textual")}
    item_graph = topk_binary_graph(rng.normal(size=(num_items, dim)), h=2)
    graphs = Graphs.build(ds.R, raw, item_graph, knn_k=3, dtype=torch.float64)
    feats = feature_tensors(raw, torch.float64)

    torch.manual_seed(seed)
    model = EGRAModel(num_users, num_items, {m: feat_dim for m in raw}, dim=dim, layers=2).double()
    with torch.no_grad():
        # move biases and the attention vector off their init values
        for p in model.parameters():
            p.add_(0.3 * torch.randn_like(p))
    config = TrainConfig(dim=dim, reg_weight=0.1,
                         schedule=AlignmentSchedule(0.01, 0.04, 10, tau1=1.0, tau2=0.5, tau3=0.5))
    triples = np.column_stack([ds.train[:5], rng.integers(0, num_items, 5)])
    epoch = 3
    with torch.no_grad():
        out = model(graphs, feats)
        view = BatchView.from_pairs(triples[:, :2], out.behavior, out.modality, num_users)
        weights = batch_weights(view, config.schedule, epoch)

    def loss():
        return total_loss(triples, model(graphs, feats), epoch, config, num_users,
                          align_weights=weights)["total"]

    names, params = zip(*model.named_parameters())
    analytic = torch.autograd.grad(loss(), params)
    numeric = central_differences(loss, params)
    errors = {}
    for name, a, n in zip(names, analytic, numeric):
        scale = max(a.norm().item(), n.norm().item(), 1e-10)
        errors[name] = (a - n).norm().item() / scale
    return errors


def evaluate_py(table, num_users, train, relevant_pairs, ks):
    """Per-metric means by explicit sorting, user by user."""
    train_of = {}
    for u, i in train:
        train_of.setdefault(u, set()).add(i)
    rel_of = {}
    for u, i in relevant_pairs:
        rel_of.setdefault(u, set()).add(i)
    num_items = len(table) - num_users
    sums = {f"{m}@{k}": 0.0 for m in ("recall", "ndcg") for k in ks}
    for u, rel in rel_of.items():
        scores = [(-sum(a * b for a, b in zip(table[u], table[num_users + i])), i)
                  for i in range(num_items) if i not in train_of.get(u, ())]
        ranked = [i for _, i in sorted(scores)]
        for k in ks:
            sums[f"recall@{k}"] += recall_py(ranked, rel, k)
            sums[f"ndcg@{k}"] += ndcg_py(ranked, rel, k)
    return {k: v / len(rel_of) for k, v in sums.items()}
