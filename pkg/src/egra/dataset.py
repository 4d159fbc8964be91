"""Interaction data: loading, per-user 8:1:1 splitting, BPR sampling and
popularity grouping of items."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from egra.errors import DataError, ParseError, ShapeError
from egra.formats import read_matrix

SPLITS = ("train", "valid", "test")
NUM_GROUPS = 5


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _token_order(tokens):
    # integer-looking ids keep their numeric order so feature rows line up
    if all(t.isdigit() for t in tokens):
        return sorted(tokens, key=int)
    return sorted(tokens)


@dataclass
class InteractionDataset:
    """Users, items and their train/valid/test interactions.

    Each split is an ``(n, 2)`` int64 array of ``(user, item)`` rows. ``R`` is
    the binary user-item matrix built from the train split only.
    """

    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    user_tokens: list = None
    item_tokens: list = None

    def __post_init__(self):
        for name in SPLITS:
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            if len(arr) and (
                arr[:, 0].min() < 0 or arr[:, 0].max() >= self.num_users
                or arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_items
            ):
                raise DataError(f"{name} split has indices out of bounds")
            setattr(self, name, arr)
        if self.user_tokens is None:
            self.user_tokens = [str(u) for u in range(self.num_users)]
        if self.item_tokens is None:
            self.item_tokens = [str(i) for i in range(self.num_items)]
        self._R = None

    @property
    def R(self):
        if self._R is None:
            data = np.ones(len(self.train), dtype=np.float32)
            self._R = sp.csr_matrix(
                (data, (self.train[:, 0], self.train[:, 1])),
                shape=(self.num_users, self.num_items),
            )
            self._R.sum_duplicates()
            self._R.data[:] = 1.0
        return self._R

    def user_items(self, split="train"):
        """List of item arrays, one per user, for the given split."""
        pairs = getattr(self, split)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        bounds = np.searchsorted(pairs[:, 0], np.arange(self.num_users + 1))
        return [pairs[bounds[u]:bounds[u + 1], 1] for u in range(self.num_users)]

    def all_pairs(self):
        return np.concatenate([self.train, self.valid, self.test])


def load_interactions(path):
    """Read whitespace-separated ``user item`` lines into an unsplit dataset.

    Extra columns are ignored and duplicate pairs collapse to one. All
    interactions land in ``train`` until :func:`split_8_1_1` is applied.
    """
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ParseError(f"expected 'user item', got {line.strip()!r}", line=lineno)
            raw.append((parts[0], parts[1]))
    if not raw:
        raise DataError(f"{path}: no interactions")
    return _from_token_pairs(raw)


def _from_token_pairs(raw, tags=None):
    user_tokens = _token_order({u for u, _ in raw})
    item_tokens = _token_order({i for _, i in raw})
    uidx = {t: k for k, t in enumerate(user_tokens)}
    iidx = {t: k for k, t in enumerate(item_tokens)}
    pairs = np.array([(uidx[u], iidx[i]) for u, i in raw], dtype=np.int64)
    if tags is None:
        pairs = np.unique(pairs, axis=0)
        return InteractionDataset(len(user_tokens), len(item_tokens), pairs,
                                  user_tokens=user_tokens, item_tokens=item_tokens)
    tags = np.asarray(tags)
    splits = {s: pairs[tags == s] for s in SPLITS}
    return InteractionDataset(len(user_tokens), len(item_tokens), **splits,
                              user_tokens=user_tokens, item_tokens=item_tokens)


def split_8_1_1(ds, seed):
    """Per-user random split: floor(n/10) valid, floor(n/10) test, rest train.

    Users with fewer than three interactions keep everything in train.
    """
    rng = _as_rng(seed)
    parts = {s: [] for s in SPLITS}
    for u, items in enumerate(_all_user_items(ds)):
        n = len(items)
        if n == 0:
            continue
        items = items[rng.permutation(n)]
        n_hold = n // 10 if n >= 3 else 0
        n_train = n - 2 * n_hold
        for name, chunk in zip(SPLITS, (items[:n_train], items[n_train:n_train + n_hold],
                                        items[n_train + n_hold:])):
            parts[name].append(np.column_stack([np.full(len(chunk), u), chunk]))
    splits = {s: np.concatenate(v) if v else np.empty((0, 2), dtype=np.int64)
              for s, v in parts.items()}
    return InteractionDataset(ds.num_users, ds.num_items, **splits,
                              user_tokens=ds.user_tokens, item_tokens=ds.item_tokens)


def _all_user_items(ds):
    merged = InteractionDataset(ds.num_users, ds.num_items, np.unique(ds.all_pairs(), axis=0))
    return merged.user_items("train")


def _pair_keys(ds):
    return np.sort(ds.train[:, 0] * ds.num_items + ds.train[:, 1])


def _is_positive(keys, users, items, num_items):
    q = users * num_items + items
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, len(keys) - 1)
    return keys[pos] == q


def sample_negatives(ds, users, rng, max_rounds=100, keys=None):
    """One uniformly drawn non-interacted item per user, by rejection."""
    rng = _as_rng(rng)
    users = np.asarray(users, dtype=np.int64)
    keys = _pair_keys(ds) if keys is None else keys
    neg = rng.integers(0, ds.num_items, size=len(users))
    bad = _is_positive(keys, users, neg, ds.num_items)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rounds:
            stuck = np.unique(users[bad])
            raise DataError(f"could not sample a negative item for users {stuck[:10].tolist()}")
        neg[bad] = rng.integers(0, ds.num_items, size=int(bad.sum()))
        bad[bad] = _is_positive(keys, users[bad], neg[bad], ds.num_items)
    return neg


def sample_bpr_triples(ds, batch_size, seed):
    """Draw ``batch_size`` (user, positive, negative) triples.

    Positives are uniform over train pairs; negatives are uniform over the
    user's non-interacted items.
    """
    if not len(ds.train):
        raise DataError("training split is empty")
    rng = _as_rng(seed)
    idx = rng.integers(0, len(ds.train), size=batch_size)
    users, pos = ds.train[idx, 0], ds.train[idx, 1]
    return np.column_stack([users, pos, sample_negatives(ds, users, rng)])


def epoch_batches(ds, batch_size, rng):
    """Yield triple batches covering every train pair once, in shuffled order."""
    rng = _as_rng(rng)
    keys = _pair_keys(ds)
    order = rng.permutation(len(ds.train))
    for start in range(0, len(order), batch_size):
        chunk = ds.train[order[start:start + batch_size]]
        neg = sample_negatives(ds, chunk[:, 0], rng, keys=keys)
        yield np.column_stack([chunk, neg])


@dataclass
class PopularityGroups:
    group_of_item: np.ndarray
    group_test_sets: list

    def group_sizes(self):
        return np.bincount(self.group_of_item, minlength=NUM_GROUPS + 1)[1:]


def assign_longtail_groups(ds):
    """Partition items into five popularity groups (1 = head).

    Items are ordered by descending train frequency, ties by item id, and cut
    into five equal contiguous segments; the last segment takes the remainder.
    """
    if not len(ds.train):
        raise DataError("training split is empty")
    freq = np.bincount(ds.train[:, 1], minlength=ds.num_items)
    order = np.lexsort((np.arange(ds.num_items), -freq))
    size = max(ds.num_items // NUM_GROUPS, 1)
    groups = np.empty(ds.num_items, dtype=np.int64)
    groups[order] = np.minimum(np.arange(ds.num_items) // size, NUM_GROUPS - 1) + 1
    test_group = groups[ds.test[:, 1]] if len(ds.test) else np.empty(0, dtype=np.int64)
    test_sets = [ds.test[test_group == g] for g in range(1, NUM_GROUPS + 1)]
    return PopularityGroups(groups, test_sets)


def check_features(features, num_items):
    """Validate a modality -> matrix mapping against the item count."""
    out = {}
    for name, mat in features.items():
        mat = np.asarray(mat, dtype=np.float32)
        if mat.ndim != 2 or mat.shape[0] != num_items:
            raise ShapeError(f"modality {name!r}: {mat.shape[0]} rows, dataset has {num_items} items")
        finite = np.isfinite(mat)
        if not finite.all():
            row = int(np.argwhere(~finite)[0, 0])
            raise DataError(f"modality {name!r}: non-finite value in row {row}")
        out[name] = mat
    return out


def load_modality_features(paths, num_items):
    return check_features({m: read_matrix(p) for m, p in paths.items()}, num_items)


def write_split_manifest(ds, path):
    with open(path, "w", encoding="utf-8") as fh:
        for name in SPLITS:
            for u, i in getattr(ds, name):
                fh.write(f"{ds.user_tokens[u]}\t{ds.item_tokens[i]}\t{name}\n")


def read_split_manifest(path):
    raw, tags = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[2] not in SPLITS:
                raise ParseError(f"expected 'user item split', got {line.strip()!r}", line=lineno)
            raw.append((parts[0], parts[1]))
            tags.append(parts[2])
    if not raw:
        raise DataError(f"{path}: empty split manifest")
    return _from_token_pairs(raw, tags)
