"""Full-ranking Recall@K / NDCG@K evaluation and long-tail breakdowns."""

from dataclasses import dataclass, field

import numpy as np

from egra.dataset import NUM_GROUPS

DEFAULT_KS = (10, 20)
USER_CHUNK = 512


def _as_numpy(table):
    if hasattr(table, "detach"):
        table = table.detach().cpu().numpy()
    return np.asarray(table, dtype=np.float64)


def rank_items(table, num_users, user, exclude=()):
    """All items for ``user`` by descending score, excluded items removed.

    Ties are broken by ascending item id.
    """
    table = _as_numpy(table)
    scores = table[num_users:] @ table[user]
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order


def recall_at_k(ranked, relevant, k):
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        return None
    hits = len(relevant.intersection(np.asarray(ranked[:k]).tolist()))
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k):
    relevant = set(np.asarray(relevant).tolist())
    if not relevant:
        return None
    dcg = sum(1.0 / np.log2(p + 2) for p, item in enumerate(ranked[:k]) if item in relevant)
    idcg = sum(1.0 / np.log2(p + 2) for p in range(min(k, len(relevant))))
    return dcg / idcg


@dataclass
class EvalReport:
    metrics: dict
    num_users: int
    groups: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.metrics[key]

    def to_text(self):
        lines = [f"{k} = {v}" for k, v in sorted(self.metadata.items())]
        lines.append(f"users = {self.num_users}")
        lines += [f"{k} = {v:.6f}" for k, v in self.metrics.items()]
        for g, rep in sorted(self.groups.items()):
            if rep is None:
                lines.append(f"group{g}.absent = true")
                continue
            lines.append(f"group{g}.users = {rep.num_users}")
            lines += [f"group{g}.{k} = {v:.6f}" for k, v in rep.metrics.items()]
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _relevance_lists(pairs, num_users):
    out = [[] for _ in range(num_users)]
    for u, i in pairs:
        out[u].append(i)
    return out


def evaluate(table, ds, ks=DEFAULT_KS, split="test", relevant_pairs=None):
    """Mean Recall@K and NDCG@K over users with at least one relevant item.

    ``table`` is the final ``(|U|+|I|, d)`` embedding table. Ranking covers
    all items minus the user's train items. ``relevant_pairs`` overrides the
    relevance set drawn from ``split``.
    """
    table = _as_numpy(table)
    pairs = getattr(ds, split) if relevant_pairs is None else np.asarray(relevant_pairs)
    relevant = _relevance_lists(pairs, ds.num_users)
    users = np.array([u for u in range(ds.num_users) if relevant[u]], dtype=np.int64)
    sums = {f"{name}@{k}": 0.0 for name in ("recall", "ndcg") for k in ks}
    if len(users) == 0:
        return EvalReport({k: 0.0 for k in sums}, 0)
    kmax = max(ks)
    disc = 1.0 / np.log2(np.arange(2, kmax + 2))
    train_lists = ds.user_items("train")
    items = table[ds.num_users:]
    for start in range(0, len(users), USER_CHUNK):
        chunk = users[start:start + USER_CHUNK]
        scores = table[chunk] @ items.T
        for row, u in enumerate(chunk):
            scores[row, train_lists[u]] = -np.inf
        top = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        for row, u in enumerate(chunk):
            rel = np.zeros(ds.num_items, dtype=bool)
            rel[relevant[u]] = True
            hit = rel[top[row]]
            # masked train items sort last; they are never real candidates
            hit[ds.num_items - len(np.unique(train_lists[u])):] = False
            n_rel = int(rel.sum())
            for k in ks:
                sums[f"recall@{k}"] += hit[:k].sum() / n_rel
                idcg = disc[:min(k, n_rel)].sum()
                sums[f"ndcg@{k}"] += (disc[:len(hit)][:k] * hit[:k]).sum() / idcg
    return EvalReport({k: v / len(users) for k, v in sums.items()}, len(users))


def longtail_evaluate(table, ds, groups, ks=DEFAULT_KS):
    """Evaluate against each popularity group's slice of the test set.

    Ranking is still over all items; only the relevance sets shrink. Groups
    with no test interactions are reported as ``None``.
    """
    out = {}
    for g in range(1, NUM_GROUPS + 1):
        subset = groups.group_test_sets[g - 1]
        out[g] = evaluate(table, ds, ks, relevant_pairs=subset) if len(subset) else None
    return out


def full_report(table, ds, groups=None, ks=DEFAULT_KS, metadata=None):
    report = evaluate(table, ds, ks)
    if groups is not None:
        report.groups = longtail_evaluate(table, ds, groups, ks)
    report.metadata = dict(metadata or {})
    return report


def write_table(path, rows, metrics=("recall@10", "recall@20", "ndcg@10", "ndcg@20")):
    """Tab-separated table: one row per variant, one column per metric."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant\t" + "\t".join(metrics) + "\n")
        for name, report in rows:
            fh.write(name + "\t" + "\t".join(f"{report.metrics[m]:.4f}" for m in metrics) + "\n")
