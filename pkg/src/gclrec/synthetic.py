"""Synthetic implicit-feedback generators for tests and benchmarks.

`generate_interactions` draws a latent-factor corpus with a tunable
popularity confound: part of each user's interactions follow a Zipf head,
the rest follow the user's latent affinity. That mix gives ranking methods
real structure to learn while keeping a long tail, which is the regime the
contrastive variants are meant to help in.
"""

import numpy as np


def generate_interactions(num_users: int = 1000, num_items: int = 1200,
                          mean_per_user: float = 30.0, latent_dim: int = 8,
                          popularity_mix: float = 0.4, zipf_exponent: float = 1.0,
                          affinity_sharpness: float = 3.0, seed: int = 0):
    """Return (user, item) index pairs of a synthetic corpus.

    Each user draws around ``mean_per_user`` distinct items; a draw follows
    global popularity with probability ``popularity_mix`` and the user's
    latent-affinity softmax otherwise.
    """
    rng = np.random.default_rng(seed)
    users_lat = rng.standard_normal((num_users, latent_dim))
    items_lat = rng.standard_normal((num_items, latent_dim))

    pop_weights = (np.arange(1, num_items + 1, dtype=np.float64)) ** (-zipf_exponent)
    rng.shuffle(pop_weights)
    pop_weights /= pop_weights.sum()

    rows = []
    for u in range(num_users):
        target = max(3, rng.poisson(mean_per_user))
        target = min(target, num_items)
        logits = affinity_sharpness * items_lat @ users_lat[u]
        logits -= logits.max()
        aff = np.exp(logits)
        aff /= aff.sum()
        probs = popularity_mix * pop_weights + (1.0 - popularity_mix) * aff
        probs /= probs.sum()
        items = rng.choice(num_items, size=target, replace=False, p=probs)
        for i in items:
            rows.append((u, int(i)))
    return np.asarray(rows, dtype=np.int64)


def generate_dense_bipartite(num_users: int, num_items: int, num_edges: int,
                             seed: int = 0) -> np.ndarray:
    """Exactly ``num_edges`` distinct random edges; used by timing benches."""
    if num_edges > num_users * num_items:
        raise ValueError("more edges requested than the bipartite graph holds")
    rng = np.random.default_rng(seed)
    flat = rng.choice(num_users * num_items, size=num_edges, replace=False)
    return np.stack([flat // num_items, flat % num_items], axis=1).astype(np.int64)


def write_interactions(path: str, pairs: np.ndarray) -> None:
    """Write pairs as a raw whitespace-delimited log with string tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"u{u}\ti{i}\n")
