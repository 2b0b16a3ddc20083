"""Losses and analytic gradients with respect to the embedding table.

Everything downstream of the table is linear except the loss heads, so the
full gradient is assembled in two stages: per-row gradients at the loss
heads (pairwise ranking, contrast, regularization), then a reverse sweep
through the propagation stack. The adjacency is symmetric, so the reverse
sweep reuses the forward product. Noise terms are constants with respect to
the parameters and contribute nothing to the sweep.

Contrast uses in-batch negatives with users and items in separate softmax
pools, summed. The softmax denominator includes the positive pair's own
term.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from gclrec import kernels
from gclrec.errors import ConfigError
from gclrec.model import EmbeddingState, NoiseSpec, propagate_perturbed, propagate_plain

log = logging.getLogger(__name__)

_ZERO_NORM_FLOOR = 1e-12


@dataclass
class Batch:
    """Mini-batch of (user, positive item, sampled negative item) triples."""

    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    _unique_users: np.ndarray | None = field(default=None, repr=False)
    _unique_items: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def batch_users(self) -> np.ndarray:
        if self._unique_users is None:
            self._unique_users = np.unique(self.users)
        return self._unique_users

    @property
    def batch_items(self) -> np.ndarray:
        """Unique positives and negatives of the batch."""
        if self._unique_items is None:
            self._unique_items = np.unique(np.concatenate([self.pos, self.neg]))
        return self._unique_items


@dataclass
class LossReport:
    rec_loss: float
    cl_loss: float
    reg_loss: float
    total: float


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def bpr_loss_and_grad(final: np.ndarray, user_rows: np.ndarray,
                      pos_rows: np.ndarray, neg_rows: np.ndarray):
    """Pairwise ranking loss -sum log sigmoid(s) with s the score margin.

    Returns the loss and per-triple gradients with respect to the three
    participating rows of ``final`` (overflow-safe log-sigmoid).
    """
    eu = final[user_rows]
    ei = final[pos_rows]
    ej = final[neg_rows]
    diff = ei - ej
    s = np.einsum("ij,ij->i", eu, diff)
    loss = float(np.logaddexp(0.0, -s).sum())
    coef = _sigmoid(s) - 1.0            # d(-log sigmoid(s))/ds
    g_u = coef[:, None] * diff
    g_i = coef[:, None] * eu
    g_j = -g_i
    return loss, g_u, g_i, g_j


def _normalize_rows(pre: np.ndarray):
    norms = np.sqrt(np.einsum("ij,ij->i", pre, pre))
    valid = norms > _ZERO_NORM_FLOOR
    z = np.zeros_like(pre)
    z[valid] = pre[valid] / norms[valid, None]
    return z, norms, valid


def _chain_normalization(g_z: np.ndarray, z: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Pull a gradient on unit rows back through z = e / |e|."""
    proj = np.einsum("ij,ij->i", g_z, z)
    return (g_z - proj[:, None] * z) / norms[:, None]


def infonce_loss_and_grad(pre_a: np.ndarray, pre_b: np.ndarray, tau: float):
    """Two-view contrast over one pool, aligned pairs on the diagonal.

    Inputs are pre-normalization rows over the same node set; returns the
    loss and gradients with respect to both inputs (normalization Jacobian
    included). Zero-norm rows are dropped from the pool with a warning.
    """
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    za, na, va = _normalize_rows(pre_a)
    zb, nb, vb = _normalize_rows(pre_b)
    valid = va & vb
    g_a = np.zeros_like(pre_a)
    g_b = np.zeros_like(pre_b)
    if not valid.all():
        log.warning("dropping %d zero-norm rows from contrast", int((~valid).sum()))
    idx = np.flatnonzero(valid)
    if idx.shape[0] == 0:
        return 0.0, g_a, g_b
    za, zb, na, nb = za[idx], zb[idx], na[idx], nb[idx]

    scores = za @ zb.T / tau
    m = scores.max(axis=1, keepdims=True)
    ex = np.exp(scores - m)
    denom = ex.sum(axis=1, keepdims=True)
    loss = float((-np.diagonal(scores) + np.log(denom[:, 0]) + m[:, 0]).sum())

    w = ex / denom                      # softmax rows
    np.fill_diagonal(w, np.diagonal(w) - 1.0)
    g_za = (w @ zb) / tau
    g_zb = (w.T @ za) / tau
    g_a[idx] = _chain_normalization(g_za, za, na)
    g_b[idx] = _chain_normalization(g_zb, zb, nb)
    return loss, g_a, g_b


def sgl_wa_loss(pre: np.ndarray, tau: float) -> float:
    """Augmentation-free contrast: per row, -log(e^{1/tau} / sum_j e^{z_i.z_j/tau})."""
    return sgl_wa_loss_and_grad(pre, tau)[0]


def sgl_wa_loss_and_grad(pre: np.ndarray, tau: float):
    """Single-view contrast; both sides of the score matrix feed the gradient."""
    if tau <= 0:
        raise ConfigError("temperature must be positive")
    z, norms, valid = _normalize_rows(pre)
    g = np.zeros_like(pre)
    if not valid.all():
        log.warning("dropping %d zero-norm rows from contrast", int((~valid).sum()))
    idx = np.flatnonzero(valid)
    if idx.shape[0] == 0:
        return 0.0, g
    z, norms = z[idx], norms[idx]

    scores = z @ z.T / tau
    m = scores.max(axis=1, keepdims=True)
    ex = np.exp(scores - m)
    denom = ex.sum(axis=1, keepdims=True)
    loss = float((np.log(denom[:, 0]) + m[:, 0] - 1.0 / tau).sum())

    w = ex / denom
    g_z = (w @ z + w.T @ z) / tau       # the constant aligned term drops out
    g[idx] = _chain_normalization(g_z, z, norms)
    return loss, g


def l2_reg_and_grad(e0: np.ndarray, rows: np.ndarray, coeff: float):
    """coeff * sum of squared table rows for the batch's unique nodes."""
    sub = e0[rows]
    loss = float(coeff * np.einsum("ij,ij->", sub, sub))
    return loss, 2.0 * coeff * sub


def backprop_propagation(adjs: list, g_final: np.ndarray,
                         layer_injections: dict[int, np.ndarray] | None,
                         include_ego: bool) -> np.ndarray:
    """Reverse sweep of the propagation stack.

    ``g_final`` is the gradient on the aggregated representation, spread to
    every layer with the aggregation weight; ``layer_injections`` maps a
    layer index (1-based) to an extra gradient entering at that layer's
    output. Returns the gradient with respect to the embedding table.
    """
    L = len(adjs)
    weight = 1.0 / (1 + L) if include_ego else 1.0 / L
    inj = layer_injections or {}
    g = weight * g_final
    if L in inj:
        g = g + inj[L]
    for layer in range(L, 0, -1):
        g = adjs[layer - 1].multiply(g)
        below = layer - 1
        if below >= 1:
            g += weight * g_final
            if below in inj:
                g += inj[below]
        elif include_ego:
            g += weight * g_final
    return g


def _as_layer_adjs(adjs, L):
    if isinstance(adjs, (list, tuple)):
        return list(adjs)
    return [adjs] * L


def _scatter(buf: np.ndarray, rows: np.ndarray, vals: np.ndarray) -> None:
    kernels.scatter_add_rows(buf, rows, vals)


def _bpr_on_final(state: EmbeddingState, batch: Batch, num_users: int,
                  g_final: np.ndarray):
    user_rows = batch.users
    pos_rows = batch.pos + num_users
    neg_rows = batch.neg + num_users
    loss, g_u, g_i, g_j = bpr_loss_and_grad(state.final, user_rows, pos_rows, neg_rows)
    _scatter(g_final, user_rows, g_u)
    _scatter(g_final, pos_rows, g_i)
    _scatter(g_final, neg_rows, g_j)
    return loss


def _contrast_pools(batch: Batch, num_users: int):
    return batch.batch_users, batch.batch_items + num_users


def _two_view_contrast(view_a: np.ndarray, view_b: np.ndarray, pools,
                       tau: float, cl_weight: float,
                       g_view_a: np.ndarray, g_view_b: np.ndarray) -> float:
    total = 0.0
    for rows in pools:
        loss, g_a, g_b = infonce_loss_and_grad(view_a[rows], view_b[rows], tau)
        total += loss
        _scatter(g_view_a, rows, cl_weight * g_a)
        _scatter(g_view_b, rows, cl_weight * g_b)
    return total


def _finalize(rec, cl, cl_weight, reg_loss, grad, e0, reg_rows, reg_coeff):
    reg, g_reg = l2_reg_and_grad(e0, reg_rows, reg_coeff)
    grad[reg_rows] += g_reg
    return LossReport(rec_loss=rec, cl_loss=cl, reg_loss=reg + reg_loss,
                      total=rec + cl_weight * cl + reg + reg_loss), grad


def _reg_rows(batch: Batch, num_users: int) -> np.ndarray:
    return np.concatenate([batch.batch_users, batch.batch_items + num_users])


def joint_loss_lightgcn(e0, adj, batch: Batch, *, L: int, reg_coeff: float):
    """Ranking loss on the full-mean representation, no contrastive term."""
    state = propagate_plain(e0, adj, L, include_ego=True)
    g_final = np.zeros_like(e0)
    rec = _bpr_on_final(state, batch, adj.num_users, g_final)
    grad = backprop_propagation(_as_layer_adjs(adj, L), g_final, None, include_ego=True)
    report, grad = _finalize(rec, 0.0, 0.0, 0.0, grad, e0,
                             _reg_rows(batch, adj.num_users), reg_coeff)
    return report, grad, state


def joint_loss_xsimgcl(e0, adj, batch: Batch, *, L: int, cl_weight: float,
                       tau: float, noise: NoiseSpec, contrast_layer,
                       reg_coeff: float, rng=None, contrast_with="final",
                       record_noise: bool = False, noise_override=None):
    """Single perturbed pass shared by the ranking and contrastive tasks.

    Ranking runs on the perturbed final representation; contrast pairs the
    final rows (or, for layer-pair sweeps, another layer's rows) with layer
    ``contrast_layer``. Gradients from both heads merge into one reverse
    sweep, with the contrast-layer gradient injected mid-stack.
    """
    if not (isinstance(contrast_layer, (int, np.integer)) and 1 <= contrast_layer <= L):
        raise ConfigError(f"contrast layer must be in [1, {L}], got {contrast_layer!r}")
    if contrast_with != "final" and not 1 <= int(contrast_with) <= L:
        raise ConfigError(f"contrast view must be 'final' or a layer in [1, {L}]")
    state = propagate_perturbed(e0, adj, L, noise, rng, record_noise=record_noise,
                                noise_override=noise_override)
    num_users = adj.num_users

    g_final = np.zeros_like(e0)
    rec = _bpr_on_final(state, batch, num_users, g_final)

    injections: dict[int, np.ndarray] = {}

    def layer_buffer(layer: int) -> np.ndarray:
        if layer not in injections:
            injections[layer] = np.zeros_like(e0)
        return injections[layer]

    view_b = state.layers[contrast_layer - 1]
    g_view_b = layer_buffer(int(contrast_layer))
    if contrast_with == "final":
        view_a, g_view_a = state.final, g_final
    else:
        view_a = state.layers[int(contrast_with) - 1]
        g_view_a = layer_buffer(int(contrast_with))
    cl = _two_view_contrast(view_a, view_b, _contrast_pools(batch, num_users),
                            tau, cl_weight, g_view_a, g_view_b)

    grad = backprop_propagation(_as_layer_adjs(adj, L), g_final, injections,
                                include_ego=False)
    report, grad = _finalize(rec, cl, cl_weight, 0.0, grad, e0,
                             _reg_rows(batch, num_users), reg_coeff)
    return report, grad, state


def joint_loss_simgcl(e0, adj, batch: Batch, *, L: int, cl_weight: float,
                      tau: float, noise: NoiseSpec, reg_coeff: float,
                      rng_view1=None, rng_view2=None, record_noise: bool = False,
                      noise_override1=None, noise_override2=None):
    """Three passes: a plain one for ranking, two noisy ones for contrast.

    All three propagate through the same adjacency and skip the ego term in
    aggregation; each pass gets its own reverse sweep into the table.
    """
    rec_state = propagate_plain(e0, adj, L, include_ego=False)
    view1 = propagate_perturbed(e0, adj, L, noise, rng_view1,
                                record_noise=record_noise, noise_override=noise_override1)
    view2 = propagate_perturbed(e0, adj, L, noise, rng_view2,
                                record_noise=record_noise, noise_override=noise_override2)
    num_users = adj.num_users

    g_rec = np.zeros_like(e0)
    rec = _bpr_on_final(rec_state, batch, num_users, g_rec)

    g_v1 = np.zeros_like(e0)
    g_v2 = np.zeros_like(e0)
    cl = _two_view_contrast(view1.final, view2.final,
                            _contrast_pools(batch, num_users),
                            tau, cl_weight, g_v1, g_v2)

    adjs = _as_layer_adjs(adj, L)
    grad = backprop_propagation(adjs, g_rec, None, include_ego=False)
    grad += backprop_propagation(adjs, g_v1, None, include_ego=False)
    grad += backprop_propagation(adjs, g_v2, None, include_ego=False)
    report, grad = _finalize(rec, cl, cl_weight, 0.0, grad, e0,
                             _reg_rows(batch, num_users), reg_coeff)
    return report, grad, rec_state


def joint_loss_sgl(e0, adj, aug1, aug2, batch: Batch, *, variant: str, L: int,
                   cl_weight: float, tau: float, reg_coeff: float):
    """Graph-augmentation contrast on top of full-mean ranking.

    ``variant`` is one of wa/ed/nd/rw; the augmented adjacencies (or, for
    rw, per-layer lists) are built once per epoch by the caller. The wa
    variant contrasts the plain encoder with itself in closed form.
    """
    if variant not in ("wa", "ed", "nd", "rw"):
        raise ConfigError(f"unknown sgl variant {variant!r}")
    rec_state = propagate_plain(e0, adj, L, include_ego=True)
    num_users = adj.num_users
    g_rec = np.zeros_like(e0)
    rec = _bpr_on_final(rec_state, batch, num_users, g_rec)
    pools = _contrast_pools(batch, num_users)
    adjs = _as_layer_adjs(adj, L)

    if variant == "wa":
        cl = 0.0
        for rows in pools:
            loss, g = sgl_wa_loss_and_grad(rec_state.final[rows], tau)
            cl += loss
            _scatter(g_rec, rows, cl_weight * g)
        grad = backprop_propagation(adjs, g_rec, None, include_ego=True)
    else:
        if aug1 is None or aug2 is None:
            raise ConfigError(f"sgl-{variant} needs two graph augmentations")
        v1 = propagate_plain(e0, aug1, L, include_ego=True)
        v2 = propagate_plain(e0, aug2, L, include_ego=True)
        g_v1 = np.zeros_like(e0)
        g_v2 = np.zeros_like(e0)
        cl = _two_view_contrast(v1.final, v2.final, pools, tau, cl_weight, g_v1, g_v2)
        grad = backprop_propagation(adjs, g_rec, None, include_ego=True)
        grad += backprop_propagation(_as_layer_adjs(aug1, L), g_v1, None, include_ego=True)
        grad += backprop_propagation(_as_layer_adjs(aug2, L), g_v2, None, include_ego=True)

    report, grad = _finalize(rec, cl, cl_weight, 0.0, grad, e0,
                             _reg_rows(batch, num_users), reg_coeff)
    return report, grad, rec_state
