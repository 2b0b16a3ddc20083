"""Command-line surface: prepare, train, eval, bench, sweep.

Heavy modules are imported inside the handlers so the --threads /
--deterministic flags can pin BLAS thread counts before numpy loads.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numerical failure.
"""

import argparse
import hashlib
import os
import sys

from gclrec.errors import ConfigError, DataError, NumericalError

MANIFEST_FILE = "run_manifest.txt"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gclrec", description=__doc__)
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured rng seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread count")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded numerics for reproducible runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a raw interaction log")
    p.add_argument("input")
    p.add_argument("out_dir")
    p.add_argument("--delimiter", default=None,
                   help="column delimiter (default: any whitespace)")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("config")
    p.add_argument("data_dir")
    p.add_argument("out_dir")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint_dir")
    p.add_argument("data_dir")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--out", default=None, help="output CSV (default: checkpoint dir)")

    p = sub.add_parser("bench", help="per-batch timing comparison of methods")
    p.add_argument("data_dir")
    p.add_argument("--methods", default="lightgcn,xsimgcl,simgcl,sgl-ed")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--batches", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=2048)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--out", default="bench.csv")

    p = sub.add_parser("sweep", help="hyperparameter grid study")
    p.add_argument("config")
    p.add_argument("data_dir")
    p.add_argument("--grid", required=True,
                   help="'name=v1,v2;name2=...' or 'layer_pairs'")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--resume", action="store_true",
                   help="skip cells already present in the output CSV")
    return parser


def _pin_threads(args) -> None:
    threads = args.threads
    if args.deterministic and threads is None:
        threads = 1
    if threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _manifest_hash(lines: list[str]) -> str:
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def write_manifest(out_dir: str, entries: dict) -> str:
    """Write the run manifest and return its short hash. Written before any
    long computation so outputs can always be traced to their inputs."""
    import gclrec

    os.makedirs(out_dir, exist_ok=True)
    lines = [f"version = {gclrec.__version__}"]
    for key, value in entries.items():
        lines.append(f"{key} = {value}")
    digest = _manifest_hash(lines)
    lines.append(f"manifest_hash = {digest}")
    with open(os.path.join(out_dir, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return digest


def dataset_fingerprint(dataset) -> dict:
    h = hashlib.sha256()
    for arr in (dataset.train, dataset.validation, dataset.test):
        h.update(arr.tobytes())
    return {
        "dataset_users": dataset.num_users,
        "dataset_items": dataset.num_items,
        "dataset_train": len(dataset.train),
        "dataset_validation": len(dataset.validation),
        "dataset_test": len(dataset.test),
        "dataset_hash": h.hexdigest()[:16],
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(path: str, header: list[str], rows, manifest_hash: str) -> None:
    """All CSV outputs start with the manifest hash as a comment line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# manifest: {manifest_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            if isinstance(row, dict):
                fh.write(",".join(_fmt(row.get(c)) for c in header) + "\n")
            else:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path: str):
    """Read back a CSV written by write_csv (comment lines skipped)."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(dict(zip(header, line.split(","))))
    return rows


def cmd_prepare(args) -> int:
    from gclrec import data as datamod

    seed = args.seed if args.seed is not None else 0
    pairs, user_tokens, item_tokens = datamod.load_interactions(
        args.input, delimiter=args.delimiter)
    dataset = datamod.split_dataset(pairs, len(user_tokens), len(item_tokens),
                                    seed=seed, user_tokens=user_tokens,
                                    item_tokens=item_tokens)
    datamod.save_splits(dataset, args.out_dir)
    stats = datamod.dataset_statistics(dataset)
    write_manifest(args.out_dir, {
        "command": "prepare", "input": args.input, "seed": seed,
        **dataset_fingerprint(dataset),
    })
    print(f"users {stats['users']}  items {stats['items']}  "
          f"feedback {stats['feedback']}  density {stats['density'] * 100:.2f}%")
    print(f"splits: train {len(dataset.train)}  validation {len(dataset.validation)}  "
          f"test {len(dataset.test)}")
    return 0


def _config_echo_lines(config) -> list[str]:
    return [f"{key} = {value}" for key, value in config.to_mapping().items()]


def cmd_train(args) -> int:
    import numpy as np

    from gclrec import data as datamod
    from gclrec import train as trainmod
    from gclrec.graph import build_adjacency
    from gclrec.model import save_embeddings_binary, save_embeddings_text

    config = trainmod.load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.validate()
    dataset = datamod.load_splits(args.data_dir)
    manifest = write_manifest(args.out_dir, {
        "command": "train", "config": args.config, "data_dir": args.data_dir,
        "seed": config.seed, **dataset_fingerprint(dataset),
        **{f"config_{k}": v for k, v in config.to_mapping().items()},
    })

    result = trainmod.train(config, dataset)

    with open(os.path.join(args.out_dir, "config_echo.conf"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(_config_echo_lines(config)) + "\n")
    save_embeddings_binary(os.path.join(args.out_dir, "embeddings.bin"), result.e0)

    write_csv(os.path.join(args.out_dir, "trace.csv"), trainmod.TRACE_COLUMNS,
              (vars(row) for row in result.trace), manifest)
    write_csv(os.path.join(args.out_dir, "uniformity.csv"), ["epoch", "value"],
              ((row.epoch, row.uniformity) for row in result.trace
               if row.uniformity is not None), manifest)

    used = dataset.merge_validation_into_train() if config.merge_validation else dataset
    adj = build_adjacency(used)
    user_emb, item_emb = trainmod.inference_embeddings(result.e0, adj, config)
    tokens = [f"user:{t}" for t in dataset.user_tokens] + \
             [f"item:{t}" for t in dataset.item_tokens]
    save_embeddings_text(os.path.join(args.out_dir, "embeddings.tsv"),
                         np.concatenate([user_emb, item_emb]), tokens)
    print(f"best epoch {result.best_epoch}  "
          f"validation recall@{config.eval_k} {result.best_recall:.6f}")
    return 0


def cmd_eval(args) -> int:
    from gclrec import data as datamod
    from gclrec import evaluate as evalmod
    from gclrec import train as trainmod
    from gclrec.data import build_popularity_groups
    from gclrec.graph import build_adjacency
    from gclrec.model import load_embeddings_binary

    config = trainmod.load_config(os.path.join(args.checkpoint_dir, "config_echo.conf"))
    dataset = datamod.load_splits(args.data_dir)
    e0 = load_embeddings_binary(os.path.join(args.checkpoint_dir, "embeddings.bin"))
    n = dataset.num_users + dataset.num_items
    if e0.shape[0] != n:
        raise DataError(
            f"checkpoint has {e0.shape[0]} rows but id map declares {n} nodes")

    used = dataset.merge_validation_into_train() if config.merge_validation else dataset
    adj = build_adjacency(used)
    user_emb, item_emb = trainmod.inference_embeddings(e0, adj, config)
    groups = build_popularity_groups(dataset)
    res = evalmod.evaluate_ranking(dataset, user_emb, item_emb, k=args.k, groups=groups)

    import numpy as np
    sample = evalmod.uniformity_sample(dataset, config.uniformity_users,
                                       config.uniformity_item_min_pop,
                                       np.random.default_rng(config.seed))
    allemb = np.concatenate([user_emb, item_emb])
    unif = evalmod.uniformity(allemb[sample])

    out_dir = args.out or args.checkpoint_dir
    manifest = write_manifest(out_dir, {
        "command": "eval", "checkpoint": args.checkpoint_dir,
        "data_dir": args.data_dir, "k": args.k, "seed": config.seed,
        **dataset_fingerprint(dataset),
    })
    rows = [("recall", "", res["recall"]),
            ("ndcg", "", res["ndcg"]),
            ("uniformity", "", unif),
            ("num_eval_users", "", res["num_eval_users"])]
    for g, value in enumerate(res["per_group_recall"], start=1):
        rows.append(("group_recall", g, value))
    write_csv(os.path.join(out_dir, "eval.csv"), ["metric", "group", "value"],
              rows, manifest)
    print(f"recall@{args.k} {res['recall']:.6f}  ndcg@{args.k} {res['ndcg']:.6f}  "
          f"uniformity {unif:.4f}")
    return 0


def cmd_bench(args) -> int:
    from gclrec import data as datamod
    from gclrec.bench import BENCH_COLUMNS, bench_methods

    dataset = datamod.load_splits(args.data_dir)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    from gclrec.train import METHODS
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    rows = bench_methods(dataset, methods, layers=args.layers,
                         batches=args.batches, batch_size=args.batch_size,
                         warmup=args.warmup,
                         seed=args.seed if args.seed is not None else 0)
    manifest = write_manifest(os.path.dirname(os.path.abspath(args.out)) or ".", {
        "command": "bench", "data_dir": args.data_dir, "methods": ",".join(methods),
        "layers": args.layers, "batches": args.batches,
        "batch_size": args.batch_size, **dataset_fingerprint(dataset),
    })
    write_csv(args.out, BENCH_COLUMNS, rows, manifest)
    for row in rows:
        print(f"{row['method']:10s} {row['batch_ms_mean']:9.3f} ms/batch  "
              f"(+aug {row['batch_ms_incl_aug']:9.3f})")
    return 0


def parse_grid_spec(spec: str) -> dict:
    spec = spec.strip()
    if spec == "layer_pairs":
        return {"layer_pairs": True}
    grid = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad grid spec segment {part!r}")
        name, values = part.split("=", 1)
        values = [v.strip() for v in values.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"grid parameter {name!r} has no values")
        grid[name.strip()] = values
    if not grid:
        raise ConfigError("empty grid spec")
    return grid


def cmd_sweep(args) -> int:
    from gclrec import data as datamod
    from gclrec import train as trainmod

    config = trainmod.load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    dataset = datamod.load_splits(args.data_dir)
    grid = parse_grid_spec(args.grid)

    param_cols = (["view_a", "view_b"] if grid.get("layer_pairs")
                  else sorted(grid))
    header = param_cols + ["status", "recall", "ndcg", "best_epoch", "error"]

    def cell_key(row):
        return tuple(_fmt(row.get(c)) for c in param_cols)

    done = {}
    if args.resume and os.path.exists(args.out):
        for row in read_csv(args.out):
            if row.get("status") == "ok":
                done[cell_key(row)] = row

    fresh = trainmod.sweep(config, dataset, grid,
                           skip=lambda cell: cell_key(cell) in done,
                           progress=lambda row: print(
                               f"cell {cell_key(row)}: {row['status']} "
                               f"recall={row['recall']}"))
    by_key = {cell_key(r): r for r in fresh}
    rows = [done.get(cell_key(c), by_key.get(cell_key(c)))
            for c in trainmod.grid_cells(config, grid)]

    manifest = write_manifest(os.path.dirname(os.path.abspath(args.out)) or ".", {
        "command": "sweep", "config": args.config, "grid": args.grid,
        "seed": config.seed, **dataset_fingerprint(dataset),
    })
    write_csv(args.out, header, rows, manifest)
    return 0


_HANDLERS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    _pin_threads(args)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
