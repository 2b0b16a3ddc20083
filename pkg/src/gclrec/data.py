"""Interaction ingestion, id mapping, per-user splitting and popularity stats.

Raw logs are delimited text, one interaction per line: user token, item
token, any further columns ignored. Tokens map to dense indices in
first-seen order. Splits are drawn per user at a 7:1:2 ratio so every user
keeps at least one training interaction.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from gclrec.errors import DataError, ParseError

SPLIT_FILES = {"train": "train.tsv", "validation": "valid.tsv", "test": "test.tsv"}
IDMAP_FILE = "idmap.tsv"


@dataclass
class InteractionDataset:
    """Dense-indexed interaction splits plus popularity statistics."""

    num_users: int
    num_items: int
    train: np.ndarray          # int64 (m, 2) of (user, item)
    validation: np.ndarray
    test: np.ndarray
    user_tokens: list[str] = field(default_factory=list)
    item_tokens: list[str] = field(default_factory=list)
    _train_sets: list[set] | None = field(default=None, repr=False)
    _exclusion_sets: list[set] | None = field(default=None, repr=False)

    @property
    def item_popularity(self) -> np.ndarray:
        """Training interaction count per item."""
        return np.bincount(self.train[:, 1], minlength=self.num_items).astype(np.int64)

    @property
    def user_popularity(self) -> np.ndarray:
        return np.bincount(self.train[:, 0], minlength=self.num_users).astype(np.int64)

    def train_items_of(self, user: int) -> set:
        if self._train_sets is None:
            sets = [set() for _ in range(self.num_users)]
            for u, i in self.train:
                sets[u].add(int(i))
            self._train_sets = sets
        return self._train_sets[user]

    def exclusions_of(self, user: int) -> set:
        """Items hidden from the ranking candidates: train + validation."""
        if self._exclusion_sets is None:
            sets = [set() for _ in range(self.num_users)]
            for u, i in self.train:
                sets[u].add(int(i))
            for u, i in self.validation:
                sets[u].add(int(i))
            self._exclusion_sets = sets
        return self._exclusion_sets[user]

    def test_items_by_user(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for u, i in self.test:
            out.setdefault(int(u), []).append(int(i))
        return out

    def merge_validation_into_train(self) -> "InteractionDataset":
        """Final-model variant: train on train + validation."""
        merged = np.concatenate([self.train, self.validation]) if len(self.validation) else self.train
        return InteractionDataset(
            num_users=self.num_users,
            num_items=self.num_items,
            train=merged,
            validation=np.empty((0, 2), dtype=np.int64),
            test=self.test,
            user_tokens=self.user_tokens,
            item_tokens=self.item_tokens,
        )


@dataclass
class PopularityGroups:
    """Ten equal-test-mass popularity buckets; larger id = more popular."""

    group_of_item: np.ndarray   # int64 per item in [1, 10]; 0 = no test mass info
    boundaries: np.ndarray      # training-popularity threshold entering each group

    @property
    def num_groups(self) -> int:
        return 10


def load_interactions(path: str, delimiter: str | None = None):
    """Parse a raw interaction log.

    Returns ``(pairs, user_tokens, item_tokens)`` where pairs is an int64
    (m, 2) array of dense indices assigned in first-seen order. ``delimiter``
    of None splits on any whitespace.
    """
    if not os.path.exists(path):
        raise DataError(f"interaction file not found: {path}")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users, items = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter)
            if len(parts) < 2:
                raise ParseError(
                    f"line {lineno}: expected user and item tokens, got {line!r}",
                    line_number=lineno,
                )
            u_tok, i_tok = parts[0], parts[1]
            u = user_index.setdefault(u_tok, len(user_index))
            i = item_index.setdefault(i_tok, len(item_index))
            users.append(u)
            items.append(i)
    if not users:
        raise DataError(f"no interactions found in {path}")
    pairs = np.stack([np.asarray(users, dtype=np.int64),
                      np.asarray(items, dtype=np.int64)], axis=1)
    return pairs, list(user_index), list(item_index)


def _per_user_counts(n: int, ratio: tuple[int, int, int]) -> tuple[int, int, int]:
    """Round the per-user split sizes; users with <3 interactions keep all."""
    if n < 3:
        return n, 0, 0
    total = sum(ratio)
    n_val = int(np.floor(n * ratio[1] / total + 0.5))
    n_test = int(np.floor(n * ratio[2] / total + 0.5))
    return n - n_val - n_test, n_val, n_test


def split_dataset(pairs: np.ndarray, num_users: int, num_items: int,
                  ratio: tuple[int, int, int] = (7, 1, 2), seed: int = 0,
                  user_tokens=None, item_tokens=None) -> InteractionDataset:
    """Deduplicate and split each user's interactions at the given ratio.

    Each user's item list is shuffled with a user-specific stream derived
    from ``seed``, so splits are reproducible and independent of input order.
    """
    dedup = np.unique(pairs, axis=0)
    if dedup[:, 0].max(initial=-1) >= num_users or dedup[:, 1].max(initial=-1) >= num_items:
        raise DataError("interaction index out of declared range")
    by_user: list[list[int]] = [[] for _ in range(num_users)]
    for u, i in dedup:
        by_user[u].append(int(i))

    train, valid, test = [], [], []
    for u, items in enumerate(by_user):
        if not items:
            continue
        arr = np.sort(np.asarray(items, dtype=np.int64))
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED, u)))
        rng.shuffle(arr)
        n_train, n_val, n_test = _per_user_counts(len(arr), ratio)
        for i in arr[:n_train]:
            train.append((u, i))
        for i in arr[n_train:n_train + n_val]:
            valid.append((u, i))
        for i in arr[n_train + n_val:]:
            test.append((u, i))

    def to_arr(rows):
        if not rows:
            return np.empty((0, 2), dtype=np.int64)
        return np.asarray(rows, dtype=np.int64)

    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        train=to_arr(train),
        validation=to_arr(valid),
        test=to_arr(test),
        user_tokens=user_tokens or [str(u) for u in range(num_users)],
        item_tokens=item_tokens or [str(i) for i in range(num_items)],
    )


def build_popularity_groups(dataset: InteractionDataset) -> PopularityGroups:
    """Partition test interactions into ten near-equal-mass popularity buckets.

    Items are ordered by training popularity (ties by index) and consumed
    from the most popular end, closing each bucket once it reaches the
    rebalanced target mass; group 10 therefore holds the head items.
    """
    if len(dataset.test) == 0:
        raise DataError("popularity groups need a non-empty test split")
    test_counts = np.bincount(dataset.test[:, 1], minlength=dataset.num_items)
    if int((test_counts > 0).sum()) < 10:
        raise DataError("fewer than 10 distinct items carry test interactions")

    pop = dataset.item_popularity
    order = np.lexsort((np.arange(dataset.num_items), pop))  # ascending pop, idx
    group_of_item = np.zeros(dataset.num_items, dtype=np.int64)
    boundaries = np.zeros(10, dtype=np.int64)

    total = int(test_counts.sum())
    remaining_mass = total
    bucket_mass = 0
    g = 10
    target = remaining_mass / 10
    for item in order[::-1]:  # most popular first
        group_of_item[item] = g
        boundaries[g - 1] = pop[item]
        bucket_mass += int(test_counts[item])
        if g > 1 and bucket_mass >= target:
            remaining_mass -= bucket_mass
            bucket_mass = 0
            g -= 1
            target = remaining_mass / g if g else 0.0
    return PopularityGroups(group_of_item=group_of_item, boundaries=boundaries)


def save_splits(dataset: InteractionDataset, out_dir: str) -> None:
    """Write train/valid/test TSVs (dense indices) and the token id map."""
    os.makedirs(out_dir, exist_ok=True)
    for name, fname in SPLIT_FILES.items():
        arr = getattr(dataset, name)
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
            for u, i in arr:
                fh.write(f"{u}\t{i}\n")
    with open(os.path.join(out_dir, IDMAP_FILE), "w", encoding="utf-8") as fh:
        for idx, tok in enumerate(dataset.user_tokens):
            fh.write(f"user\t{tok}\t{idx}\n")
        for idx, tok in enumerate(dataset.item_tokens):
            fh.write(f"item\t{tok}\t{idx}\n")


def load_splits(data_dir: str) -> InteractionDataset:
    """Load a directory written by :func:`save_splits`."""
    idmap_path = os.path.join(data_dir, IDMAP_FILE)
    if not os.path.exists(idmap_path):
        raise DataError(f"id map not found: {idmap_path}")
    user_tokens, item_tokens = [], []
    with open(idmap_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            kind, tok, idx = line.rstrip("\n").split("\t")
            target = user_tokens if kind == "user" else item_tokens
            if int(idx) != len(target):
                raise DataError(f"{idmap_path}:{lineno}: non-contiguous index")
            target.append(tok)

    def read_pairs(fname):
        path = os.path.join(data_dir, fname)
        if not os.path.exists(path):
            raise DataError(f"split file not found: {path}")
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    u, i = line.split()[:2]
                    rows.append((int(u), int(i)))
        if not rows:
            return np.empty((0, 2), dtype=np.int64)
        return np.asarray(rows, dtype=np.int64)

    return InteractionDataset(
        num_users=len(user_tokens),
        num_items=len(item_tokens),
        train=read_pairs(SPLIT_FILES["train"]),
        validation=read_pairs(SPLIT_FILES["validation"]),
        test=read_pairs(SPLIT_FILES["test"]),
        user_tokens=user_tokens,
        item_tokens=item_tokens,
    )


def dataset_statistics(dataset: InteractionDataset) -> dict:
    """Counts and density in the usual dataset-table form."""
    feedback = len(dataset.train) + len(dataset.validation) + len(dataset.test)
    density = feedback / (dataset.num_users * dataset.num_items)
    return {
        "users": dataset.num_users,
        "items": dataset.num_items,
        "feedback": feedback,
        "density": density,
    }
