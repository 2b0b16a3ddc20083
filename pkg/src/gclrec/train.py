"""Mini-batch training loop: sampling, Adam, early stopping, sweeps.

One optimizer step per batch; augmented graphs (sgl-ed/nd/rw) are redrawn
once per epoch; noise streams are keyed by (seed, epoch, batch) so any
forward pass can be replayed exactly. Early stopping watches validation
Recall@K and returns the best checkpoint, never the last.
"""

import logging
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from gclrec import evaluate as evalmod
from gclrec import graph as graphmod
from gclrec import losses
from gclrec.data import InteractionDataset
from gclrec.errors import ConfigError, NumericalError
from gclrec.model import NoiseSpec, init_embeddings, propagate_plain

log = logging.getLogger(__name__)

METHODS = ("lightgcn", "sgl-wa", "sgl-ed", "sgl-nd", "sgl-rw", "simgcl", "xsimgcl")

# rng stream tags; every stream is keyed (seed, tag, ...) and replayable
_TAG_INIT = 11
_TAG_BATCH = 12
_TAG_NOISE = 13
_TAG_AUG = 14
_TAG_LAYER_PICK = 15
_TAG_UNIFORMITY = 16


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + key))


@dataclass
class TrainConfig:
    """All hyperparameters; irrelevant fields for a method are warned about."""

    method: str = "xsimgcl"
    layers: int = 2
    dim: int = 64
    lr: float = 0.001
    reg: float = 1e-4
    batch_size: int = 2048
    cl_weight: float = 0.2              # lambda
    epsilon: float = 0.2
    tau: float = 0.2
    contrast_layer: int | str = 1       # l*, or "random"
    keep_rate: float = 0.9              # rho, sgl-ed/nd/rw
    noise: str = "signed-uniform"
    max_epochs: int = 500
    patience: int = 10
    seed: int = 0
    merge_validation: bool = False
    eval_interval: int = 1
    eval_k: int = 20
    uniformity_users: int = 5000
    uniformity_item_min_pop: int = 200

    def validate(self) -> list[str]:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r} (choose from {METHODS})")
        positive = dict(layers=self.layers, dim=self.dim, lr=self.lr,
                        batch_size=self.batch_size, tau=self.tau,
                        max_epochs=self.max_epochs, eval_k=self.eval_k,
                        eval_interval=self.eval_interval)
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        for name, value in dict(reg=self.reg, cl_weight=self.cl_weight,
                                epsilon=self.epsilon, patience=self.patience).items():
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if not 0.0 < self.keep_rate <= 1.0:
            raise ConfigError(f"keep_rate must be in (0, 1], got {self.keep_rate}")
        if self.noise not in ("signed-uniform", "positive-uniform", "gaussian", "none"):
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if self.contrast_layer != "random":
            l_star = self.contrast_layer
            if not isinstance(l_star, int) or not 1 <= l_star <= self.layers:
                raise ConfigError(
                    f"contrast_layer must be 'random' or in [1, {self.layers}], got {l_star!r}")
        return self._warn_irrelevant()

    def _warn_irrelevant(self) -> list[str]:
        defaults = TrainConfig()
        irrelevant = {
            "lightgcn": ("cl_weight", "epsilon", "tau", "contrast_layer", "keep_rate", "noise"),
            "sgl-wa": ("epsilon", "contrast_layer", "keep_rate", "noise"),
            "sgl-ed": ("epsilon", "contrast_layer", "noise"),
            "sgl-nd": ("epsilon", "contrast_layer", "noise"),
            "sgl-rw": ("epsilon", "contrast_layer", "noise"),
            "simgcl": ("contrast_layer", "keep_rate"),
            "xsimgcl": ("keep_rate",),
        }[self.method]
        notes = []
        for name in irrelevant:
            if getattr(self, name) != getattr(defaults, name):
                note = f"{self.method} ignores {name}={getattr(self, name)}"
                log.warning(note)
                notes.append(note)
        return notes

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(epsilon=self.epsilon, kind=self.noise)

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_KEY_ALIASES = {"lambda": "cl_weight", "l_star": "contrast_layer", "rho": "keep_rate"}
_BOOL_WORDS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def config_from_mapping(mapping: dict) -> TrainConfig:
    """Build a config from string keys/values; unknown keys are rejected."""
    known = {f.name: f for f in fields(TrainConfig)}
    kwargs = {}
    for raw_key, raw_val in mapping.items():
        key = _KEY_ALIASES.get(raw_key, raw_key)
        if key not in known:
            raise ConfigError(f"unknown config key {raw_key!r}")
        kwargs[key] = _parse_value(key, raw_val)
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


def _parse_value(key: str, value):
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if key in ("method", "noise"):
            return value
        if key == "merge_validation":
            return _BOOL_WORDS[value.lower()]
        if key == "contrast_layer":
            return value if value == "random" else int(value)
        if key in ("layers", "dim", "batch_size", "max_epochs", "patience", "seed",
                   "eval_interval", "eval_k", "uniformity_users", "uniformity_item_min_pop"):
            return int(value)
        return float(value)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def parse_config_text(text: str) -> TrainConfig:
    """Flat `key = value` lines; '#' starts a comment; unknown keys rejected."""
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return config_from_mapping(mapping)


def load_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, t: int,
              lr: float, rows: np.ndarray | None = None) -> None:
    """Bias-corrected Adam update, optionally restricted to touched rows."""
    if t < 1:
        raise ValueError("step counter starts at 1")
    if not np.isfinite(grads).all():
        raise NumericalError(f"non-finite gradient at step {t}")
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    if rows is None:
        m, v, p, g = state.m, state.v, params, grads
    else:
        m, v, p, g = state.m[rows], state.v[rows], params[rows], grads
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    if rows is not None:
        state.m[rows], state.v[rows], params[rows] = m, v, p


def sample_batches(dataset: InteractionDataset, batch_size: int, rng):
    """Shuffled per-epoch stream of batches with one fresh negative per pair.

    Negatives are uniform over items, redrawn while they hit the user's
    training items.
    """
    pairs = dataset.train
    perm = rng.permutation(len(pairs))
    num_items = dataset.num_items
    for start in range(0, len(pairs), batch_size):
        take = pairs[perm[start:start + batch_size]]
        users = np.ascontiguousarray(take[:, 0])
        pos = np.ascontiguousarray(take[:, 1])
        neg = rng.integers(0, num_items, size=len(take))
        for k, u in enumerate(users):
            seen = dataset.train_items_of(int(u))
            while int(neg[k]) in seen:
                neg[k] = rng.integers(0, num_items)
        yield losses.Batch(users=users, pos=pos, neg=neg)


@dataclass
class TraceRow:
    epoch: int
    rec_loss: float
    cl_loss: float
    reg_loss: float
    total_loss: float
    val_recall: float | None
    val_ndcg: float | None
    uniformity: float | None
    batch_ms: float
    epoch_seconds: float


TRACE_COLUMNS = [f.name for f in fields(TraceRow)]


@dataclass
class TrainResult:
    e0: np.ndarray                      # best-validation parameters
    best_epoch: int
    best_recall: float
    trace: list[TraceRow]
    config: TrainConfig
    include_ego_inference: bool


def inference_embeddings(e0: np.ndarray, adj, config: TrainConfig):
    """Noise-free representations for scoring; the noise-based variants keep
    their skip-ego aggregation at test time."""
    include_ego = config.method in ("lightgcn", "sgl-wa", "sgl-ed", "sgl-nd", "sgl-rw")
    state = propagate_plain(e0, adj, config.layers, include_ego=include_ego)
    nu = adj.num_users
    return state.final[:nu], state.final[nu:]


def _epoch_augmentations(adj, config: TrainConfig, epoch: int):
    """Per-epoch corrupted graphs for the sgl dropout variants."""
    kind = config.method
    if kind == "sgl-ed":
        return tuple(
            graphmod.edge_dropout(adj, config.keep_rate,
                                  stream_rng(config.seed, _TAG_AUG, epoch, view))
            for view in (1, 2))
    if kind == "sgl-nd":
        return tuple(
            graphmod.node_dropout(adj, config.keep_rate,
                                  stream_rng(config.seed, _TAG_AUG, epoch, view))
            for view in (1, 2))
    if kind == "sgl-rw":
        return tuple(
            [graphmod.edge_dropout(adj, config.keep_rate,
                                   stream_rng(config.seed, _TAG_AUG, epoch, view, layer))
             for layer in range(config.layers)]
            for view in (1, 2))
    return None, None


def batch_loss_and_grad(e0, adj, batch, config: TrainConfig, epoch: int,
                        batch_index: int, augmentations=(None, None)):
    """Dispatch the method-appropriate joint loss; returns (report, grad)."""
    method = config.method
    if method == "lightgcn":
        report, grad, _ = losses.joint_loss_lightgcn(
            e0, adj, batch, L=config.layers, reg_coeff=config.reg)
        return report, grad
    if method == "xsimgcl":
        l_star = config.contrast_layer
        if l_star == "random":
            pick = stream_rng(config.seed, _TAG_LAYER_PICK, epoch, batch_index)
            l_star = int(pick.integers(1, config.layers + 1))
        report, grad, _ = losses.joint_loss_xsimgcl(
            e0, adj, batch, L=config.layers, cl_weight=config.cl_weight,
            tau=config.tau, noise=config.noise_spec(), contrast_layer=l_star,
            reg_coeff=config.reg,
            rng=stream_rng(config.seed, _TAG_NOISE, epoch, batch_index, 0))
        return report, grad
    if method == "simgcl":
        report, grad, _ = losses.joint_loss_simgcl(
            e0, adj, batch, L=config.layers, cl_weight=config.cl_weight,
            tau=config.tau, noise=config.noise_spec(), reg_coeff=config.reg,
            rng_view1=stream_rng(config.seed, _TAG_NOISE, epoch, batch_index, 1),
            rng_view2=stream_rng(config.seed, _TAG_NOISE, epoch, batch_index, 2))
        return report, grad
    variant = method.split("-", 1)[1]
    report, grad, _ = losses.joint_loss_sgl(
        e0, adj, augmentations[0], augmentations[1], batch, variant=variant,
        L=config.layers, cl_weight=config.cl_weight, tau=config.tau,
        reg_coeff=config.reg)
    return report, grad


def train(config: TrainConfig, dataset: InteractionDataset) -> TrainResult:
    """Run the full optimization and return the best-validation checkpoint."""
    config.validate()
    if config.merge_validation:
        dataset = dataset.merge_validation_into_train()
    if len(dataset.train) == 0:
        raise ConfigError("training split is empty")
    adj = graphmod.build_adjacency(dataset)
    n = dataset.num_users + dataset.num_items
    e0 = init_embeddings(n, config.dim, stream_rng(config.seed, _TAG_INIT))
    adam = AdamState.like(e0)
    has_validation = len(dataset.validation) > 0

    unif_nodes = evalmod.uniformity_sample(
        dataset, config.uniformity_users, config.uniformity_item_min_pop,
        stream_rng(config.seed, _TAG_UNIFORMITY))

    trace: list[TraceRow] = []
    best_recall = -np.inf
    best_epoch = 0
    best_e0 = e0.copy()
    epochs_since_best = 0
    t = 0

    for epoch in range(1, config.max_epochs + 1):
        epoch_start = time.perf_counter()
        augmentations = _epoch_augmentations(adj, config, epoch)
        sums = np.zeros(4)
        n_pairs = 0
        batch_time = 0.0
        n_batches = 0
        batch_rng = stream_rng(config.seed, _TAG_BATCH, epoch)
        for b_idx, batch in enumerate(sample_batches(dataset, config.batch_size, batch_rng)):
            tick = time.perf_counter()
            report, grad = batch_loss_and_grad(e0, adj, batch, config, epoch,
                                               b_idx, augmentations)
            if not np.isfinite(report.total):
                err = NumericalError(
                    f"loss diverged at epoch {epoch} batch {b_idx}: {report}")
                err.trace = trace
                raise err
            t += 1
            adam_step(e0, grad, adam, t, config.lr)
            batch_time += time.perf_counter() - tick
            n_batches += 1
            sums += (report.rec_loss, report.cl_loss, report.reg_loss, report.total)
            n_pairs += len(batch)

        val_recall = val_ndcg = unif = None
        if epoch % config.eval_interval == 0 or epoch == config.max_epochs:
            user_emb, item_emb = inference_embeddings(e0, adj, config)
            if has_validation:
                val_recall, val_ndcg = evalmod.recall_ndcg(
                    dataset, user_emb, item_emb, k=config.eval_k, split="validation")
            allemb = np.concatenate([user_emb, item_emb])
            unif = evalmod.uniformity(allemb[unif_nodes])

        trace.append(TraceRow(
            epoch=epoch,
            rec_loss=sums[0] / n_pairs, cl_loss=sums[1] / n_pairs,
            reg_loss=sums[2] / n_pairs, total_loss=sums[3] / n_pairs,
            val_recall=val_recall, val_ndcg=val_ndcg, uniformity=unif,
            batch_ms=1e3 * batch_time / max(n_batches, 1),
            epoch_seconds=time.perf_counter() - epoch_start,
        ))

        if val_recall is not None:
            if val_recall > best_recall:
                best_recall = val_recall
                best_epoch = epoch
                best_e0 = e0.copy()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best > config.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                    break

    if not has_validation or best_epoch == 0:
        best_e0, best_epoch = e0.copy(), len(trace)
        best_recall = float("nan")
    return TrainResult(e0=best_e0, best_epoch=best_epoch,
                       best_recall=float(best_recall), trace=trace, config=config,
                       include_ego_inference=config.method.startswith(("lightgcn", "sgl")))


def layer_pair_cells(layers: int) -> list[tuple]:
    """Sweep cells for layer-pair contrast: (a, b) with b <= a, plus random."""
    cells = [(a, b) for a in range(1, layers + 1) for b in range(1, a + 1)]
    cells.append(("final", "random"))
    return cells


def grid_cells(config: TrainConfig, grid: dict) -> list[dict]:
    """Expand a grid spec into cell parameter dicts (validated)."""
    if grid.get("layer_pairs"):
        return [{"view_a": a, "view_b": b} for a, b in layer_pair_cells(config.layers)]
    names = sorted(grid)
    for name in names:
        if name not in {f.name for f in fields(TrainConfig)} | set(_KEY_ALIASES):
            raise ConfigError(f"unknown sweep parameter {name!r}")
    combos = [{}]
    for name in names:
        combos = [dict(c, **{name: v}) for c in combos for v in grid[name]]
    return combos


def sweep(config: TrainConfig, dataset: InteractionDataset, grid: dict,
          skip=None, progress=None) -> list[dict]:
    """Train one model per grid cell; failures are recorded, not raised.

    ``grid`` either maps hyperparameter names (cl_weight, epsilon, ...) to
    value lists, or is {"layer_pairs": true} for the contrast-pair study.
    Cells for which ``skip(cell)`` is true are left out (resume support).
    """
    pair_mode = bool(grid.get("layer_pairs"))
    rows = []
    for cell in grid_cells(config, grid):
        if skip and skip(cell):
            continue
        if pair_mode:
            rows.append(_run_cell(config, dataset, cell,
                                  contrast_pair=(cell["view_a"], cell["view_b"]),
                                  progress=progress))
        else:
            canonical = {_KEY_ALIASES.get(k, k): _parse_value(_KEY_ALIASES.get(k, k), v)
                         for k, v in cell.items()}
            rows.append(_run_cell(config, dataset, cell, overrides=canonical,
                                  progress=progress))
    return rows


def _run_cell(config, dataset, cell, overrides=None, contrast_pair=None, progress=None):
    row = dict(cell)
    try:
        cfg = replace(config, **(overrides or {}))
        if contrast_pair is not None:
            a, b = contrast_pair
            if b == "random":
                cfg = replace(cfg, contrast_layer="random")
            else:
                cfg = replace(cfg, contrast_layer=int(b))
                if a != "final":
                    cfg = replace(cfg, method="xsimgcl")
        result = _train_cell(cfg, dataset, contrast_pair)
        adj = graphmod.build_adjacency(
            dataset.merge_validation_into_train() if cfg.merge_validation else dataset)
        user_emb, item_emb = inference_embeddings(result.e0, adj, cfg)
        recall, ndcg = evalmod.recall_ndcg(dataset, user_emb, item_emb, k=cfg.eval_k)
        row.update(status="ok", recall=recall, ndcg=ndcg,
                   best_epoch=result.best_epoch, error="")
    except Exception as exc:  # per-cell isolation: the sweep must go on
        log.warning("sweep cell %s failed: %s", cell, exc)
        row.update(status="failed", recall=float("nan"), ndcg=float("nan"),
                   best_epoch=0, error=str(exc))
    if progress:
        progress(row)
    return row


def _train_cell(cfg: TrainConfig, dataset, contrast_pair):
    if contrast_pair is None or contrast_pair[0] == "final" or contrast_pair[1] == "random":
        return train(cfg, dataset)
    # intermediate-pair contrast: same loop with the generalized contrast views
    return _train_with_pair(cfg, dataset, contrast_pair)


def _train_with_pair(config: TrainConfig, dataset, pair):
    """Training variant for the layer-pair sweep: contrast layer a with b."""
    a, b = pair
    config.validate()
    if config.merge_validation:
        dataset = dataset.merge_validation_into_train()
    adj = graphmod.build_adjacency(dataset)
    n = dataset.num_users + dataset.num_items
    e0 = init_embeddings(n, config.dim, stream_rng(config.seed, _TAG_INIT))
    adam = AdamState.like(e0)
    best_recall, best_epoch, best_e0 = -np.inf, 0, e0.copy()
    since = 0
    t = 0
    trace: list[TraceRow] = []
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        sums = np.zeros(4)
        n_pairs = 0
        batch_rng = stream_rng(config.seed, _TAG_BATCH, epoch)
        for b_idx, batch in enumerate(sample_batches(dataset, config.batch_size, batch_rng)):
            report, grad, _ = losses.joint_loss_xsimgcl(
                e0, adj, batch, L=config.layers, cl_weight=config.cl_weight,
                tau=config.tau, noise=config.noise_spec(), contrast_layer=int(b),
                reg_coeff=config.reg, contrast_with=int(a),
                rng=stream_rng(config.seed, _TAG_NOISE, epoch, b_idx, 0))
            if not np.isfinite(report.total):
                raise NumericalError(f"loss diverged at epoch {epoch}")
            t += 1
            adam_step(e0, grad, adam, t, config.lr)
            sums += (report.rec_loss, report.cl_loss, report.reg_loss, report.total)
            n_pairs += len(batch)
        user_emb, item_emb = inference_embeddings(e0, adj, config)
        val_recall = None
        if len(dataset.validation):
            val_recall, _ = evalmod.recall_ndcg(dataset, user_emb, item_emb,
                                                k=config.eval_k, split="validation")
        trace.append(TraceRow(epoch, sums[0] / n_pairs, sums[1] / n_pairs,
                              sums[2] / n_pairs, sums[3] / n_pairs, val_recall,
                              None, None, 0.0, time.perf_counter() - start))
        if val_recall is not None:
            if val_recall > best_recall:
                best_recall, best_epoch, best_e0, since = val_recall, epoch, e0.copy(), 0
            else:
                since += 1
                if since > config.patience:
                    break
    if best_epoch == 0:
        best_e0, best_epoch = e0.copy(), len(trace)
    return TrainResult(e0=best_e0, best_epoch=best_epoch, best_recall=float(best_recall),
                       trace=trace, config=config, include_ego_inference=False)
