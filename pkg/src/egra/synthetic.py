"""Planted-block synthetic interactions with long-tailed item popularity and
block-correlated modality features."""

import numpy as np

from egra.dataset import InteractionDataset, split_8_1_1


def make_synthetic(num_users=300, num_items=150, blocks=5, seed=0, latent_dim=8,
                   spread=1.0, sharpness=0.7, zipf=1.0, min_items=20, max_items=40,
                   feature_dims=None, feature_noise=0.5):
    """Return ``(dataset, features)`` with an 8:1:1 split already applied.

    Users and items get latent vectors ``centroid[block] + spread * noise``
    with blocks assigned round-robin. A user picks ``min_items..max_items``
    distinct items with probability proportional to
    ``popularity * exp(sharpness * <user, item>)``, where popularity follows a
    Zipf law over shuffled ranks. Each modality is a random linear view of
    the item latents plus Gaussian noise of scale ``feature_noise``.
    """
    if not 1 <= min_items <= max_items < num_items:
        raise ValueError("need 1 <= min_items <= max_items < num_items")
    rng = np.random.default_rng(seed)
    feature_dims = feature_dims or {"visual": 32, "textual": 16}
    centroids = rng.normal(size=(blocks, latent_dim)) / np.sqrt(latent_dim)
    user_lat = centroids[np.arange(num_users) % blocks] + spread * rng.normal(
        size=(num_users, latent_dim)) / np.sqrt(latent_dim)
    item_lat = centroids[np.arange(num_items) % blocks] + spread * rng.normal(
        size=(num_items, latent_dim)) / np.sqrt(latent_dim)
    log_pop = -zipf * np.log(np.arange(1, num_items + 1))[rng.permutation(num_items)]

    logits = sharpness * latent_dim * user_lat @ item_lat.T + log_pop
    pairs = []
    for u in range(num_users):
        n = int(rng.integers(min_items, max_items + 1))
        # Gumbel top-n samples n distinct items without replacement
        keys = logits[u] + rng.gumbel(size=num_items)
        pairs.extend((u, i) for i in np.argpartition(-keys, n)[:n])
    ds = InteractionDataset(num_users, num_items, np.unique(np.array(pairs), axis=0))

    features = {}
    for name, dim in feature_dims.items():
        view = rng.normal(size=(latent_dim, dim))
        clean = item_lat @ view
        clean /= clean.std()
        features[name] = (clean + feature_noise * rng.normal(size=(num_items, dim))).astype(np.float32)
    return split_8_1_1(ds, seed), features
