import numpy as np
import pytest

from egra.dataset import assign_longtail_groups
from egra.synthetic import make_synthetic


def test_shapes_and_split():
    ds, feats = make_synthetic(seed=0)
    assert (ds.num_users, ds.num_items) == (300, 150)
    assert feats["visual"].shape == (150, 32) and feats["textual"].shape == (150, 16)
    per_user = np.bincount(ds.all_pairs()[:, 0], minlength=300)
    assert per_user.min() >= 20 and per_user.max() <= 40
    assert len(np.unique(ds.all_pairs(), axis=0)) == len(ds.all_pairs())


def test_deterministic():
    a, fa = make_synthetic(seed=3)
    b, fb = make_synthetic(seed=3)
    assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)
    assert np.array_equal(fa["visual"], fb["visual"])
    c, _ = make_synthetic(seed=4)
    assert not np.array_equal(a.train, c.train)


def test_popularity_is_long_tailed():
    ds, _ = make_synthetic(seed=0)
    freq = np.bincount(ds.train[:, 1], minlength=ds.num_items)
    groups = assign_longtail_groups(ds)
    head = freq[groups.group_of_item == 1].sum()
    tail = freq[groups.group_of_item >= 4].sum()
    assert head > 2 * tail


def test_users_prefer_their_block():
    ds, _ = make_synthetic(seed=0)
    pairs = ds.all_pairs()
    same = np.mean(pairs[:, 0] % 5 == pairs[:, 1] % 5)
    assert same > 0.35  # uniform choice would give 0.2


def test_features_track_blocks():
    _, feats = make_synthetic(seed=0)
    x = feats["visual"] / np.linalg.norm(feats["visual"], axis=1, keepdims=True)
    sim = x @ x.T
    block = np.arange(150) % 5
    same = block[:, None] == block[None, :]
    np.fill_diagonal(same, False)
    other = ~same
    np.fill_diagonal(other, False)
    assert sim[same].mean() > sim[other].mean() + 0.2


def test_rejects_impossible_counts():
    with pytest.raises(ValueError):
        make_synthetic(num_items=20, max_items=20)
