import logging
import math

import numpy as np
import pytest

from gclrec import losses as ls
from gclrec.errors import ConfigError
from gclrec.graph import edge_dropout
from gclrec.model import NoiseSpec, l2_normalize, propagate_perturbed, propagate_plain
from gclrec.train import stream_rng

from conftest import random_instance
from oracles import max_rel_error, numeric_gradient


# ---------------------------------------------------------------- bpr

def test_bpr_equal_scores_give_log_two():
    final = np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]])
    loss, *_ = ls.bpr_loss_and_grad(final, np.array([0]), np.array([1]), np.array([2]))
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_bpr_saturated_margin():
    # margin +20: per-triple loss = log(1 + e^-20) ~ 2.06e-9, no overflow
    final = np.array([[1.0], [20.0], [0.0]])
    loss, *_ = ls.bpr_loss_and_grad(final, np.array([0]), np.array([1]), np.array([2]))
    assert loss == pytest.approx(2.061153622e-9, rel=1e-6)
    final = np.array([[1.0], [-700.0], [700.0]])
    loss, *_ = ls.bpr_loss_and_grad(final, np.array([0]), np.array([1]), np.array([2]))
    assert np.isfinite(loss) and loss == pytest.approx(1400.0)


def test_bpr_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    final = rng.standard_normal((6, 4))
    users, pos, neg = np.array([0, 1]), np.array([2, 3]), np.array([4, 5])

    def f(x):
        return ls.bpr_loss_and_grad(x, users, pos, neg)[0]

    _, gu, gi, gj = ls.bpr_loss_and_grad(final, users, pos, neg)
    analytic = np.zeros_like(final)
    for rows, g in ((users, gu), (pos, gi), (neg, gj)):
        np.add.at(analytic, rows, g)
    assert max_rel_error(analytic, numeric_gradient(f, final.copy())) < 1e-6


# ---------------------------------------------------------------- infonce / wa

def test_infonce_single_node_identical_views_is_zero():
    view = np.array([[0.3, -1.2, 0.5]])
    loss, ga, gb = ls.infonce_loss_and_grad(view, view.copy(), tau=0.2)
    assert loss == pytest.approx(0.0, abs=1e-14)


def test_infonce_identical_views_equals_wa_closed_form():
    rng = np.random.default_rng(1)
    for m in (2, 5, 9):
        view = rng.standard_normal((m, 4))
        loss_nce, *_ = ls.infonce_loss_and_grad(view, view.copy(), tau=0.2)
        loss_wa = ls.sgl_wa_loss(view, tau=0.2)
        assert abs(loss_nce - loss_wa) <= 1e-12


def test_wa_two_orthogonal_rows_hand_value():
    view = np.array([[2.0, 0.0], [0.0, 0.5]])   # normalizes to orthogonal units
    loss = ls.sgl_wa_loss(view, tau=0.2)
    expected = 2.0 * (math.log(math.exp(5.0) + 1.0) - 5.0)
    assert expected == pytest.approx(0.013430696978, abs=1e-12)
    assert loss == pytest.approx(expected, abs=1e-12)


def test_wa_single_node_is_zero():
    assert ls.sgl_wa_loss(np.array([[1.0, 2.0]]), tau=0.2) == pytest.approx(0.0, abs=1e-14)


def test_infonce_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    pre_a = rng.standard_normal((5, 3))
    pre_b = rng.standard_normal((5, 3))
    loss, ga, gb = ls.infonce_loss_and_grad(pre_a, pre_b, tau=0.2)
    gn_a = numeric_gradient(lambda x: ls.infonce_loss_and_grad(x, pre_b, 0.2)[0],
                            pre_a.copy())
    gn_b = numeric_gradient(lambda x: ls.infonce_loss_and_grad(pre_a, x, 0.2)[0],
                            pre_b.copy())
    assert max_rel_error(ga, gn_a) < 1e-6
    assert max_rel_error(gb, gn_b) < 1e-6


def test_wa_gradient_matches_finite_differences_and_infonce():
    rng = np.random.default_rng(3)
    pre = rng.standard_normal((6, 4))
    loss, g = ls.sgl_wa_loss_and_grad(pre, tau=0.2)
    gn = numeric_gradient(lambda x: ls.sgl_wa_loss_and_grad(x, 0.2)[0], pre.copy())
    assert max_rel_error(g, gn) < 1e-6
    # the two-view gradient on identical views must agree with the closed form
    _, ga, gb = ls.infonce_loss_and_grad(pre, pre.copy(), tau=0.2)
    np.testing.assert_allclose(ga + gb, g, atol=1e-10)


def test_contrast_drops_zero_norm_rows_with_warning(caplog):
    pre = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    with caplog.at_level(logging.WARNING):
        loss, ga, gb = ls.infonce_loss_and_grad(pre, pre.copy(), tau=0.2)
    assert "zero-norm" in caplog.text
    assert not ga[1].any() and not gb[1].any()
    two_rows = np.array([[1.0, 0.0], [0.0, 1.0]])
    reference, *_ = ls.infonce_loss_and_grad(two_rows, two_rows.copy(), tau=0.2)
    assert loss == pytest.approx(reference)


def test_temperature_must_be_positive():
    view = np.ones((2, 2))
    with pytest.raises(ConfigError):
        ls.infonce_loss_and_grad(view, view, tau=0.0)
    with pytest.raises(ConfigError):
        ls.sgl_wa_loss_and_grad(view, tau=-1.0)


# ---------------------------------------------------------------- reg

def test_l2_reg_values_and_gradient():
    e0 = np.array([[3.0, 4.0], [1.0, 1.0]])
    loss, g = ls.l2_reg_and_grad(e0, np.array([0]), 1e-4)
    assert loss == pytest.approx(2.5e-3)
    np.testing.assert_allclose(g, [[6e-4, 8e-4]])
    zero, gz = ls.l2_reg_and_grad(np.zeros((3, 2)), np.array([0, 1]), 1e-4)
    assert zero == 0.0 and not gz.any()
    gn = numeric_gradient(lambda x: ls.l2_reg_and_grad(x, np.array([0, 1]), 1e-4)[0],
                          e0.copy())
    analytic = np.zeros_like(e0)
    analytic[[0, 1]] = ls.l2_reg_and_grad(e0, np.array([0, 1]), 1e-4)[1]
    assert max_rel_error(analytic, gn, floor=1e-8) < 1e-6


# ---------------------------------------------------------------- joint: xsimgcl

def frozen_xsimgcl_kwargs(seed, adj, e0, l_star=1, L=2, eps=0.1, lam=0.2):
    deltas = propagate_perturbed(e0, adj, L, NoiseSpec(eps),
                                 stream_rng(seed, 13, 1, 0, 0), record_noise=True).noise
    return dict(L=L, cl_weight=lam, tau=0.2, noise=NoiseSpec(eps),
                contrast_layer=l_star, reg_coeff=1e-4, noise_override=deltas)


def test_xsimgcl_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(20):
        _, adj, e0, batch = random_instance(seed)
        kw = frozen_xsimgcl_kwargs(seed, adj, e0)
        _, g, _ = ls.joint_loss_xsimgcl(e0, adj, batch, **kw)
        gn = numeric_gradient(
            lambda e: ls.joint_loss_xsimgcl(e, adj, batch, **kw)[0].total, e0.copy())
        worst = max(worst, max_rel_error(g, gn))
    assert worst < 1e-5


def test_xsimgcl_lambda_zero_is_bpr_only_training():
    _, adj, e0, batch = random_instance(1)
    kw = frozen_xsimgcl_kwargs(1, adj, e0, lam=0.0)
    report, grad, state = ls.joint_loss_xsimgcl(e0, adj, batch, **kw)
    assert report.total == pytest.approx(report.rec_loss + report.reg_loss)
    # gradient must equal a pure ranking gradient through the same pass
    g_final = np.zeros_like(e0)
    rec = ls._bpr_on_final(state, batch, adj.num_users, g_final)
    expected = ls.backprop_propagation([adj, adj], g_final, None, include_ego=False)
    rows = ls._reg_rows(batch, adj.num_users)
    expected[rows] += ls.l2_reg_and_grad(e0, rows, 1e-4)[1]
    np.testing.assert_allclose(grad, expected, atol=1e-12)
    assert rec == pytest.approx(report.rec_loss)


def test_xsimgcl_one_layer_contrasts_final_with_itself():
    # single-layer setting: the contrastive term degenerates to the
    # augmentation-free closed form on the perturbed final rows
    _, adj, e0, batch = random_instance(2)
    kw = frozen_xsimgcl_kwargs(2, adj, e0, l_star=1, L=1)
    report, _, state = ls.joint_loss_xsimgcl(e0, adj, batch, **kw)
    users = batch.batch_users
    items = batch.batch_items + adj.num_users
    expected = (ls.sgl_wa_loss(state.final[users], 0.2) +
                ls.sgl_wa_loss(state.final[items], 0.2))
    assert report.cl_loss == pytest.approx(expected, abs=1e-10)


def test_xsimgcl_validates_contrast_layer():
    _, adj, e0, batch = random_instance(3)
    with pytest.raises(ConfigError):
        ls.joint_loss_xsimgcl(e0, adj, batch, L=2, cl_weight=0.1, tau=0.2,
                              noise=NoiseSpec(0.1), contrast_layer=3,
                              reg_coeff=0.0, rng=np.random.default_rng(0))


def test_xsimgcl_layer_pair_contrast_gradient():
    # sweep mode: contrast two intermediate layers instead of the final
    for seed in (0, 4):
        _, adj, e0, batch = random_instance(seed)
        deltas = propagate_perturbed(e0, adj, 3, NoiseSpec(0.1),
                                     stream_rng(seed, 13, 1, 0, 0),
                                     record_noise=True).noise
        kw = dict(L=3, cl_weight=0.2, tau=0.2, noise=NoiseSpec(0.1),
                  contrast_layer=1, reg_coeff=1e-4, contrast_with=2,
                  noise_override=deltas)
        _, g, _ = ls.joint_loss_xsimgcl(e0, adj, batch, **kw)
        gn = numeric_gradient(
            lambda e: ls.joint_loss_xsimgcl(e, adj, batch, **kw)[0].total, e0.copy())
        assert max_rel_error(g, gn) < 1e-5


# ---------------------------------------------------------------- joint: simgcl

def frozen_simgcl_kwargs(seed, adj, e0, L=2, eps=0.1, lam=0.2):
    d1 = propagate_perturbed(e0, adj, L, NoiseSpec(eps),
                             stream_rng(seed, 13, 1, 0, 1), record_noise=True).noise
    d2 = propagate_perturbed(e0, adj, L, NoiseSpec(eps),
                             stream_rng(seed, 13, 1, 0, 2), record_noise=True).noise
    return dict(L=L, cl_weight=lam, tau=0.2, noise=NoiseSpec(eps), reg_coeff=1e-4,
                noise_override1=d1, noise_override2=d2)


def test_simgcl_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(20):
        _, adj, e0, batch = random_instance(seed)
        kw = frozen_simgcl_kwargs(seed, adj, e0)
        _, g, _ = ls.joint_loss_simgcl(e0, adj, batch, **kw)
        gn = numeric_gradient(
            lambda e: ls.joint_loss_simgcl(e, adj, batch, **kw)[0].total, e0.copy())
        worst = max(worst, max_rel_error(g, gn))
    assert worst < 1e-5


def test_simgcl_zero_noise_collapses_to_wa_value():
    _, adj, e0, batch = random_instance(5)
    kw = frozen_simgcl_kwargs(5, adj, e0, eps=0.0)
    report, _, rec_state = ls.joint_loss_simgcl(e0, adj, batch, **kw)
    users = batch.batch_users
    items = batch.batch_items + adj.num_users
    expected = (ls.sgl_wa_loss(rec_state.final[users], 0.2) +
                ls.sgl_wa_loss(rec_state.final[items], 0.2))
    assert report.cl_loss == pytest.approx(expected, abs=1e-10)


def test_simgcl_lambda_zero_reduces_to_skip_ego_ranking():
    _, adj, e0, batch = random_instance(6)
    kw = frozen_simgcl_kwargs(6, adj, e0, lam=0.0)
    report, grad, _ = ls.joint_loss_simgcl(e0, adj, batch, **kw)
    state = propagate_plain(e0, adj, 2, include_ego=False)
    g_final = np.zeros_like(e0)
    ls._bpr_on_final(state, batch, adj.num_users, g_final)
    expected = ls.backprop_propagation([adj, adj], g_final, None, include_ego=False)
    rows = ls._reg_rows(batch, adj.num_users)
    expected[rows] += ls.l2_reg_and_grad(e0, rows, 1e-4)[1]
    np.testing.assert_allclose(grad, expected, atol=1e-12)
    assert report.cl_loss != 0.0   # contrast still evaluated, just unweighted


# ---------------------------------------------------------------- joint: sgl

def test_sgl_gradients_match_finite_differences():
    worst = {}
    for seed in range(8):
        _, adj, e0, batch = random_instance(seed)
        a1 = edge_dropout(adj, 0.8, stream_rng(seed, 14, 1))
        a2 = edge_dropout(adj, 0.8, stream_rng(seed, 14, 2))
        rw1 = [edge_dropout(adj, 0.8, stream_rng(seed, 14, 3, l)) for l in range(2)]
        rw2 = [edge_dropout(adj, 0.8, stream_rng(seed, 14, 4, l)) for l in range(2)]
        for variant, aug1, aug2 in (("wa", None, None), ("ed", a1, a2),
                                    ("nd", a1, a2), ("rw", rw1, rw2)):
            kw = dict(variant=variant, L=2, cl_weight=0.2, tau=0.2, reg_coeff=1e-4)
            _, g, _ = ls.joint_loss_sgl(e0, adj, aug1, aug2, batch, **kw)
            gn = numeric_gradient(
                lambda e: ls.joint_loss_sgl(e, adj, aug1, aug2, batch, **kw)[0].total,
                e0.copy())
            worst[variant] = max(worst.get(variant, 0.0), max_rel_error(g, gn))
    assert all(v < 1e-5 for v in worst.values()), worst


def test_sgl_full_keep_rate_views_equal_wa_value():
    _, adj, e0, batch = random_instance(7)
    full1 = edge_dropout(adj, 1.0, stream_rng(7, 14, 1))
    full2 = edge_dropout(adj, 1.0, stream_rng(7, 14, 2))
    report, _, rec_state = ls.joint_loss_sgl(e0, adj, full1, full2, batch,
                                             variant="ed", L=2, cl_weight=0.1,
                                             tau=0.2, reg_coeff=1e-4)
    users = batch.batch_users
    items = batch.batch_items + adj.num_users
    expected = (ls.sgl_wa_loss(rec_state.final[users], 0.2) +
                ls.sgl_wa_loss(rec_state.final[items], 0.2))
    assert report.cl_loss == pytest.approx(expected, abs=1e-10)


def test_sgl_wa_table_configuration_runs():
    # the no-augmentation control: lambda 0.1, tau 0.2, no graphs needed
    _, adj, e0, batch = random_instance(8)
    report, grad, _ = ls.joint_loss_sgl(e0, adj, None, None, batch, variant="wa",
                                        L=2, cl_weight=0.1, tau=0.2, reg_coeff=1e-4)
    assert report.total == pytest.approx(
        report.rec_loss + 0.1 * report.cl_loss + report.reg_loss)
    assert np.isfinite(grad).all()
    with pytest.raises(ConfigError):
        ls.joint_loss_sgl(e0, adj, None, None, batch, variant="ed", L=2,
                          cl_weight=0.1, tau=0.2, reg_coeff=1e-4)
    with pytest.raises(ConfigError):
        ls.joint_loss_sgl(e0, adj, None, None, batch, variant="xx", L=2,
                          cl_weight=0.1, tau=0.2, reg_coeff=1e-4)


# ---------------------------------------------------------------- properties

def test_contrast_pressure_lowers_mean_cosine():
    # free embeddings, contrast loss alone: plain descent must spread them out
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((10, 6)) * 0.5 + 1.0   # clustered start

    def mean_cosine(x):
        z = l2_normalize(x)
        gram = z @ z.T
        m = len(x)
        return (gram.sum() - m) / (m * (m - 1))

    history = [mean_cosine(emb)]
    for _ in range(200):
        _, g = ls.sgl_wa_loss_and_grad(emb, tau=0.2)
        emb = emb - 0.05 * g
        history.append(mean_cosine(emb))
    assert history[-1] < history[0]
    assert all(b < a + 1e-12 for a, b in zip(history, history[1:]))


def test_one_descent_step_reduces_joint_loss():
    _, adj, e0, batch = random_instance(9)
    kw = frozen_xsimgcl_kwargs(9, adj, e0)
    report, grad, _ = ls.joint_loss_xsimgcl(e0, adj, batch, **kw)
    stepped = e0 - 1e-3 * grad
    after, _, _ = ls.joint_loss_xsimgcl(stepped, adj, batch, **kw)
    assert after.total < report.total
