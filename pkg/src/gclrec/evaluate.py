"""Full-ranking top-K metrics, popularity-group decomposition, uniformity.

Scores are plain inner products of the aggregated user and item
representations over the whole catalog; already-seen items (train plus
validation when evaluating on test) are masked out. Ties break by ascending
item index via a stable sort so rankings are reproducible.
"""

from dataclasses import dataclass

import numpy as np

from gclrec.data import InteractionDataset, PopularityGroups
from gclrec.errors import DataError
from gclrec.model import l2_normalize

_CHUNK = 256


@dataclass
class EvalReport:
    recall_at_k: float
    ndcg_at_k: float
    per_group_recall: list[float]       # nan where a group has no test mass
    uniformity: float
    k: int
    num_eval_users: int


def _targets_and_exclusions(dataset: InteractionDataset, split: str):
    if split == "test":
        target_pairs = dataset.test
        exclude = lambda u: dataset.exclusions_of(u)
    elif split == "validation":
        target_pairs = dataset.validation
        exclude = lambda u: dataset.train_items_of(u)
    else:
        raise ValueError(f"unknown split {split!r}")
    targets: dict[int, list[int]] = {}
    for u, i in target_pairs:
        targets.setdefault(int(u), []).append(int(i))
    return targets, exclude


def rank_items(user_emb: np.ndarray, item_emb: np.ndarray, user: int,
               exclusions, k: int) -> np.ndarray:
    """Top-k item indices for one user, seen items masked, ties by index."""
    scores = item_emb @ user_emb[user]
    if exclusions:
        scores[list(exclusions)] = -np.inf
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def _topk_matrix(user_emb, item_emb, users, exclude, k):
    """Rank a list of users in chunks; returns int64 (len(users), k)."""
    out = np.empty((len(users), k), dtype=np.int64)
    for start in range(0, len(users), _CHUNK):
        chunk = users[start:start + _CHUNK]
        scores = user_emb[chunk] @ item_emb.T
        for r, u in enumerate(chunk):
            excl = exclude(u)
            if excl:
                scores[r, list(excl)] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")
        out[start:start + len(chunk)] = order[:, :k]
    return out


def _dcg_discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def evaluate_ranking(dataset: InteractionDataset, user_emb: np.ndarray,
                     item_emb: np.ndarray, k: int = 20,
                     groups: PopularityGroups | None = None,
                     split: str = "test"):
    """One ranking pass yielding recall, NDCG and optional per-group recall.

    Users without target items are skipped. NDCG uses binary gains with the
    1/log2(rank+1) discount and an ideal ranking of min(|targets|, k) items.
    """
    targets, exclude = _targets_and_exclusions(dataset, split)
    users = sorted(targets)
    if not users:
        raise DataError(f"no users with {split} interactions")
    k = min(k, item_emb.shape[0])
    topk = _topk_matrix(user_emb, item_emb, users, exclude, k)
    discounts = _dcg_discounts(k)
    ideal_cum = np.concatenate([[0.0], np.cumsum(discounts)])

    recalls = np.empty(len(users))
    ndcgs = np.empty(len(users))
    n_groups = groups.num_groups if groups is not None else 0
    group_hits = np.zeros((len(users), n_groups))
    group_counts = np.zeros((len(users), n_groups))

    for r, u in enumerate(users):
        t = set(targets[u])
        hit_mask = np.fromiter((item in t for item in topk[r]), dtype=bool, count=k)
        hits = int(hit_mask.sum())
        recalls[r] = hits / len(t)
        ndcgs[r] = discounts[hit_mask].sum() / ideal_cum[min(len(t), k)]
        if groups is not None:
            for item in targets[u]:
                group_counts[r, groups.group_of_item[item] - 1] += 1
            for item in topk[r][hit_mask]:
                group_hits[r, groups.group_of_item[item] - 1] += 1

    result = {
        "recall": float(recalls.mean()),
        "ndcg": float(ndcgs.mean()),
        "num_eval_users": len(users),
    }
    if groups is not None:
        per_group = []
        for g in range(n_groups):
            mask = group_counts[:, g] > 0
            if not mask.any():
                per_group.append(float("nan"))
            else:
                per_group.append(float((group_hits[mask, g] / group_counts[mask, g]).mean()))
        result["per_group_recall"] = per_group
    return result


def recall_ndcg(dataset: InteractionDataset, user_emb: np.ndarray,
                item_emb: np.ndarray, k: int = 20, split: str = "test"):
    res = evaluate_ranking(dataset, user_emb, item_emb, k=k, split=split)
    return res["recall"], res["ndcg"]


def group_recall(dataset: InteractionDataset, user_emb: np.ndarray,
                 item_emb: np.ndarray, groups: PopularityGroups,
                 k: int = 20) -> list[float]:
    res = evaluate_ranking(dataset, user_emb, item_emb, k=k, groups=groups)
    return res["per_group_recall"]


def uniformity(rows: np.ndarray, max_pairs: int = 1_000_000, rng=None) -> float:
    """Log of the mean pairwise Gaussian potential of the normalized rows.

    All distinct pairs are used when their count fits under ``max_pairs``;
    otherwise that many pairs are drawn i.i.d. (distinct endpoints). Lower
    values mean a more even spread on the unit sphere.
    """
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    rows = rows[norms > 0]
    if rows.shape[0] < 2:
        raise DataError("uniformity needs at least two nonzero rows")
    z = l2_normalize(rows)
    m = z.shape[0]
    if m * (m - 1) // 2 <= max_pairs:
        total = 0.0
        for start in range(0, m, _CHUNK):
            gram = z[start:start + _CHUNK] @ z.T
            total += float(np.exp(-2.0 * (2.0 - 2.0 * gram)).sum())
        mean = (total - m) / (m * (m - 1))  # drop self-pairs
    else:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        remaining = max_pairs
        acc = 0.0
        while remaining > 0:
            take = min(remaining, 1 << 18)
            u = rng.integers(0, m, size=take)
            v = rng.integers(0, m, size=take)
            ok = u != v
            u, v = u[ok], v[ok]
            sq = np.einsum("ij,ij->i", z[u] - z[v], z[u] - z[v])
            acc += float(np.exp(-2.0 * sq).sum())
            remaining -= len(u)
        mean = acc / max_pairs
    return float(np.log(mean))


def uniformity_sample(dataset: InteractionDataset, num_users: int = 5000,
                      item_min_pop: int = 200, rng=None) -> np.ndarray:
    """Node sample for uniformity tracking: popular items plus random users."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    pop = dataset.item_popularity
    items = np.flatnonzero(pop > item_min_pop) + dataset.num_users
    take = min(num_users, dataset.num_users)
    users = rng.choice(dataset.num_users, size=take, replace=False)
    return np.concatenate([np.sort(users), items])
