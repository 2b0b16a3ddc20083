"""Per-batch timing harness comparing the training cost of the methods.

Each method is timed on identical pre-drawn batches and identical initial
embeddings, measuring one forward+backward (loss and full gradient), with
the first ``warmup`` batches discarded. For the dropout-based variants the
per-epoch augmentation rebuild is timed separately and amortized over the
dataset's batches-per-epoch.
"""

import time
from dataclasses import replace

import numpy as np

from gclrec import kernels
from gclrec.data import InteractionDataset
from gclrec.graph import build_adjacency
from gclrec.model import init_embeddings
from gclrec.train import (TrainConfig, _epoch_augmentations, batch_loss_and_grad,
                          sample_batches, stream_rng)

BENCH_COLUMNS = ["method", "batches", "batch_ms_mean", "batch_ms_std",
                 "rebuild_ms_per_epoch", "batches_per_epoch",
                 "batch_ms_incl_aug", "backend"]


def _draw_batches(dataset: InteractionDataset, batch_size: int, count: int, seed: int):
    batches = []
    epoch = 0
    while len(batches) < count:
        epoch += 1
        for batch in sample_batches(dataset, batch_size, stream_rng(seed, 0xB, epoch)):
            batches.append(batch)
            if len(batches) == count:
                break
    return batches


def bench_methods(dataset: InteractionDataset, methods, *, layers: int = 2,
                  batches: int = 30, batch_size: int = 2048, warmup: int = 5,
                  seed: int = 0, base_config: TrainConfig | None = None) -> list[dict]:
    """Time forward+backward per batch for each method; returns CSV-ready rows."""
    base = base_config or TrainConfig()
    base = replace(base, layers=layers, batch_size=batch_size, seed=seed)
    adj = build_adjacency(dataset)
    n = dataset.num_users + dataset.num_items
    e0 = init_embeddings(n, base.dim, stream_rng(seed, 0xE))
    pool = _draw_batches(dataset, batch_size, batches + warmup, seed) if batches > 0 else []
    batches_per_epoch = max(1, -(-len(dataset.train) // batch_size))

    rows = []
    for method in methods:
        config = replace(base, method=method)
        rebuild_ms = 0.0
        if method in ("sgl-ed", "sgl-nd", "sgl-rw"):
            reps = 3
            tick = time.perf_counter()
            for r in range(reps):
                _epoch_augmentations(adj, config, epoch=r + 1)
            rebuild_ms = 1e3 * (time.perf_counter() - tick) / reps
        augmentations = _epoch_augmentations(adj, config, epoch=1)

        times = []
        for k, batch in enumerate(pool):
            tick = time.perf_counter()
            batch_loss_and_grad(e0, adj, batch, config, epoch=1, batch_index=k,
                                augmentations=augmentations)
            elapsed = time.perf_counter() - tick
            if k >= warmup:
                times.append(elapsed * 1e3)
        if not times:
            continue
        mean = float(np.mean(times))
        rows.append({
            "method": method,
            "batches": len(times),
            "batch_ms_mean": mean,
            "batch_ms_std": float(np.std(times)),
            "rebuild_ms_per_epoch": rebuild_ms,
            "batches_per_epoch": batches_per_epoch,
            "batch_ms_incl_aug": mean + rebuild_ms / batches_per_epoch,
            "backend": kernels.backend_name(),
        })
    return rows
