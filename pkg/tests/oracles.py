"""Independent oracles used by the test suite.

Everything here is deliberately written against dense numpy or plain Python
dictionaries, never through the package's own propagation/scoring paths, so
agreement is meaningful.
"""

import math

import numpy as np


def dense_norm_adjacency(num_users: int, num_items: int, edges) -> np.ndarray:
    """Dense symmetric normalized adjacency built straight from the formula."""
    n = num_users + num_items
    a = np.zeros((n, n))
    for u, i in edges:
        a[u, num_users + i] = 1.0
        a[num_users + i, u] = 1.0
    deg = a.sum(axis=1)
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return a * inv[:, None] * inv[None, :]


def dense_propagate(a: np.ndarray, e0: np.ndarray, L: int, include_ego: bool) -> np.ndarray:
    """Final representation via explicit dense matrix powers."""
    terms = []
    cur = e0.copy()
    if include_ego:
        terms.append(cur.copy())
    for _ in range(L):
        cur = a @ cur
        terms.append(cur.copy())
    return sum(terms) / len(terms)


def numeric_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.shape[0]):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 3e-4) -> float:
    """Worst per-entry relative error with the denominator floored.

    Central differences at h=1e-6 carry ~eps*|f|/h of roundoff (~1e-9 for
    our loss magnitudes), so entries below ``floor`` are effectively judged
    on absolute error; entries of real size get a true relative comparison.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def brute_topk(scores, exclusions, k):
    """Full sort with explicit (score desc, index asc) ordering."""
    ranked = sorted(
        (i for i in range(len(scores)) if i not in exclusions),
        key=lambda i: (-scores[i], i),
    )
    return ranked[:k]


def brute_recall_ndcg(test_by_user, exclusions_by_user, score_fn, num_items, k):
    """Second implementation of the full-ranking metrics, dict/loop style."""
    recalls, ndcgs = [], []
    for u, targets in sorted(test_by_user.items()):
        scores = [score_fn(u, i) for i in range(num_items)]
        top = brute_topk(scores, exclusions_by_user.get(u, set()), k)
        tset = set(targets)
        hits = [rank for rank, item in enumerate(top, start=1) if item in tset]
        recalls.append(len(hits) / len(tset))
        dcg = sum(1.0 / math.log2(rank + 1) for rank in hits)
        idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(tset), k) + 1))
        ndcgs.append(dcg / idcg)
    return sum(recalls) / len(recalls), sum(ndcgs) / len(ndcgs)


def scalar_adam_updates(g: float, steps: int, lr: float = 0.001, beta1: float = 0.9,
                        beta2: float = 0.999, eps: float = 1e-8):
    """Parameter trajectory for a single weight under a constant gradient."""
    theta, m, v = 0.0, 0.0, 0.0
    values = []
    for t in range(1, steps + 1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        theta -= lr * mhat / (math.sqrt(vhat) + eps)
        values.append(theta)
    return values


def sample_vmf(mu: np.ndarray, kappa: float, count: int, rng) -> np.ndarray:
    """von Mises-Fisher sampler (Wood's rejection scheme) for cluster oracles."""
    d = mu.shape[0]
    mu = mu / np.linalg.norm(mu)
    b = (-2 * kappa + math.sqrt(4 * kappa ** 2 + (d - 1) ** 2)) / (d - 1)
    x0 = (1 - b) / (1 + b)
    c = kappa * x0 + (d - 1) * math.log(1 - x0 ** 2)
    out = np.empty((count, d))
    for row in range(count):
        while True:
            z = rng.beta((d - 1) / 2, (d - 1) / 2)
            w = (1 - (1 + b) * z) / (1 - (1 - b) * z)
            u = rng.random()
            if kappa * w + (d - 1) * math.log(1 - x0 * w) - c >= math.log(u):
                break
        v = rng.standard_normal(d)
        v -= v.dot(mu) * mu
        v /= np.linalg.norm(v)
        out[row] = w * mu + math.sqrt(max(0.0, 1 - w * w)) * v
    return out
