import numpy as np
import pytest

from gclrec.data import split_dataset
from gclrec.graph import build_adjacency
from gclrec.synthetic import generate_dense_bipartite


@pytest.fixture
def small_graph():
    """Random 4x4-node bipartite training graph plus its dataset."""
    pairs = generate_dense_bipartite(4, 4, 10, seed=7)
    ds = split_dataset(pairs, 4, 4, seed=7)
    return ds, build_adjacency(ds)


def random_instance(seed, num_users=4, num_items=4, dim=3, edges=10, batch=5):
    """Small random dataset + adjacency + embeddings + batch for grad checks."""
    from gclrec.losses import Batch
    from gclrec.model import init_embeddings

    rng = np.random.default_rng(seed)
    pairs = generate_dense_bipartite(num_users, num_items, edges, seed=seed)
    ds = split_dataset(pairs, num_users, num_items, seed=seed)
    adj = build_adjacency(ds)
    e0 = init_embeddings(num_users + num_items, dim, seed + 100)
    tr = ds.train
    take = min(batch, len(tr))
    users = tr[:take, 0].copy()
    pos = tr[:take, 1].copy()
    neg = rng.integers(0, num_items, take)
    return ds, adj, e0, Batch(users=users, pos=pos, neg=neg)
