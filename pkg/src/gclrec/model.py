"""Embedding table, multi-layer propagation and noise perturbation.

The model is parameter-free beyond the embedding table: forward passes are
repeated normalized-adjacency products, optionally perturbed per layer by
radius-eps noise confined to the hyperoctant of the pre-noise output. Two
aggregation modes exist: the full mean over layers 0..L, and the skip-ego
mean over layers 1..L used by the noise-based variants (training and
inference alike).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

NOISE_KINDS = ("signed-uniform", "positive-uniform", "gaussian", "none")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise radius and distribution for perturbed propagation."""

    epsilon: float = 0.0
    kind: str = "signed-uniform"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("noise radius must be >= 0")


@dataclass
class EmbeddingState:
    """Outputs of one forward pass, retained for contrast and backprop."""

    e0: np.ndarray                      # (n, d) learnable table
    layers: list[np.ndarray]            # L per-layer outputs (post-noise)
    final: np.ndarray                   # aggregated representation
    include_ego: bool                   # True: mean over e0..layer L
    noise: list[np.ndarray] | None = field(default=None, repr=False)

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def init_embeddings(n: int, d: int, rng) -> np.ndarray:
    """Xavier-uniform table: entries from U(-b, b), b = sqrt(6/(n+d))."""
    if n <= 0 or d <= 0:
        raise ValueError("embedding table dimensions must be positive")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    bound = np.sqrt(6.0 / (n + d))
    return rng.uniform(-bound, bound, size=(n, d))


def sample_noise(anchor: np.ndarray, spec: NoiseSpec, rng) -> np.ndarray:
    """Draw noise of exact L2 radius eps per row, anchored at ``anchor``.

    signed-uniform: U(0,1) components signed to the anchor's hyperoctant
    (zero components count as positive); positive-uniform drops the sign
    step; gaussian is an isotropic normal scaled to the radius.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    squeeze = anchor.ndim == 1
    rows = anchor[None, :] if squeeze else anchor
    if spec.kind == "none" or spec.epsilon == 0.0:
        out = np.zeros_like(rows)
        return out[0] if squeeze else out
    if spec.kind == "gaussian":
        raw = rng.standard_normal(rows.shape)
    else:
        raw = rng.random(rows.shape)
        if spec.kind == "signed-uniform":
            raw = np.copysign(raw, rows)
    norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
    scale = spec.epsilon / np.maximum(norms, 1e-300)
    out = raw * scale[:, None]
    return out[0] if squeeze else out


def aggregate(e0: np.ndarray, layers: list[np.ndarray], include_ego: bool) -> np.ndarray:
    if include_ego:
        acc = e0.copy()
        for layer in layers:
            acc += layer
        return acc / (1 + len(layers))
    acc = layers[0].copy()
    for layer in layers[1:]:
        acc += layer
    return acc / len(layers)


def propagate_plain(e0: np.ndarray, adjs, L: int | None = None,
                    include_ego: bool = True) -> EmbeddingState:
    """Noise-free propagation.

    ``adjs`` is a single adjacency or a per-layer list (multi-layer edge
    dropout uses independent graphs per layer). ``include_ego=True`` gives
    the 1/(1+L) mean over e0 and all layer outputs; False gives the 1/L
    mean over layer outputs only.
    """
    adjs = _layer_list(adjs, L)
    layers = []
    current = e0
    for adj in adjs:
        current = adj.multiply(current)
        layers.append(current)
    return EmbeddingState(e0=e0, layers=layers,
                          final=aggregate(e0, layers, include_ego),
                          include_ego=include_ego)


def propagate_perturbed(e0: np.ndarray, adjs, L: int | None, spec: NoiseSpec,
                        rng, record_noise: bool = False,
                        noise_override: list[np.ndarray] | None = None) -> EmbeddingState:
    """Propagation with fresh per-node noise added after every layer.

    Noise anchors at the current layer's pre-noise output and is excluded
    from the aggregate's ego term: the final representation is the 1/L mean
    of the noisy layer outputs. ``noise_override`` replays previously
    recorded noise matrices instead of sampling (the noise is a constant
    with respect to the parameters, so gradient checks freeze it this way).
    """
    adjs = _layer_list(adjs, L)
    layers = []
    noise_log = [] if record_noise else None
    current = e0
    for depth, adj in enumerate(adjs):
        pre = adj.multiply(current)
        if noise_override is not None:
            delta = noise_override[depth]
        else:
            delta = sample_noise(pre, spec, rng)
        current = pre + delta
        layers.append(current)
        if record_noise:
            noise_log.append(delta)
    return EmbeddingState(e0=e0, layers=layers,
                          final=aggregate(e0, layers, include_ego=False),
                          include_ego=False, noise=noise_log)


def _layer_list(adjs, L):
    if isinstance(adjs, (list, tuple)):
        if L is not None and len(adjs) != L:
            raise ValueError("per-layer adjacency list length != L")
        if not adjs:
            raise ValueError("need at least one propagation layer")
        return list(adjs)
    if L is None or L < 1:
        raise ValueError("layer count must be >= 1")
    return [adjs] * L


def l2_normalize(rows: np.ndarray) -> np.ndarray:
    """Scale each row to unit norm; zero rows are left zero."""
    norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    safe = np.where(norms > 0.0, norms, 1.0)
    return rows / safe[:, None]


_BINARY_MAGIC = b"GCLE"


def save_embeddings_binary(path: str, table: np.ndarray) -> None:
    """Checkpoint format: magic, endianness tag, int64 n and d, row-major f8."""
    table = np.ascontiguousarray(table, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(b"<")
        fh.write(struct.pack("<qq", table.shape[0], table.shape[1]))
        fh.write(table.astype("<f8").tobytes())


def load_embeddings_binary(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BINARY_MAGIC:
            raise ValueError(f"{path}: not an embedding checkpoint")
        endian = fh.read(1)
        if endian != b"<":
            raise ValueError(f"{path}: unsupported endianness tag {endian!r}")
        n, d = struct.unpack("<qq", fh.read(16))
        data = np.frombuffer(fh.read(n * d * 8), dtype="<f8", count=n * d)
    return data.reshape(n, d).astype(np.float64)


def save_embeddings_text(path: str, table: np.ndarray, tokens: list[str]) -> None:
    """One `token <tab> d floats` line per node, for downstream plotting."""
    if len(tokens) != table.shape[0]:
        raise ValueError("token count != embedding rows")
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(tokens, table):
            fh.write(tok + "\t" + "\t".join(f"{v:.17g}" for v in row) + "\n")
