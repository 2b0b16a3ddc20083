"""Microbenchmark of the compiled kernels against the numpy fallback.

Usage: python -m gclrec.kernels.bench [--csv out.csv]

Times the sparse propagation product and the row scatter-add on a few
synthetic sizes and prints one row per (kernel, size, backend).
"""

import argparse
import sys
import time

import numpy as np

from gclrec import kernels


def _random_csr(n_rows: int, nnz_per_row: int, rng):
    cols = rng.integers(0, n_rows, size=(n_rows, nnz_per_row))
    cols = np.sort(cols, axis=1)
    indices = cols.reshape(-1).astype(np.int64)
    indptr = np.arange(0, n_rows * nnz_per_row + 1, nnz_per_row, dtype=np.int64)
    data = rng.random(indices.shape[0])
    return indptr, indices, data


def _time(f, reps: int) -> float:
    f()
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        f()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def run(sizes=((2000, 10, 64), (20000, 10, 64), (20000, 40, 64)), reps: int = 5):
    rng = np.random.default_rng(0)
    rows = []
    for n, nnz_per_row, d in sizes:
        indptr, indices, data = _random_csr(n, nnz_per_row, rng)
        dense = rng.standard_normal((n, d))
        scatter_rows = rng.integers(0, n, size=4096).astype(np.int64)
        scatter_vals = rng.standard_normal((4096, d))
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            t_spmm = _time(lambda: kernels.spmm(indptr, indices, data, dense), reps)
            acc = np.zeros((n, d))
            t_scatter = _time(lambda: kernels.scatter_add_rows(acc, scatter_rows, scatter_vals), reps)
            rows.append({"kernel": "spmm", "n": n, "nnz": len(indices), "d": d,
                         "backend": backend, "ms": t_spmm})
            rows.append({"kernel": "scatter_add", "n": n, "nnz": 4096, "d": d,
                         "backend": backend, "ms": t_scatter})
    kernels.set_backend("auto")
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--csv", help="also write rows to this CSV file")
    parser.add_argument("--reps", type=int, default=5)
    args = parser.parse_args(argv)
    rows = run(reps=args.reps)
    header = ["kernel", "n", "nnz", "d", "backend", "ms"]
    print(",".join(header))
    for row in rows:
        print(",".join(str(row[c]) for c in header))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(row[c]) for c in header) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
