import math

import numpy as np
import pytest

import featadv as fa
from featadv import adversary as adv
from featadv import layers as L
from featadv import network as N
from featadv.exceptions import (DegenerateInputError, NoAdversaryError,
                                SpecError)


def cfg(**kw):
    kw.setdefault("max_iterations", 200)
    return fa.AdvConfig(**kw)


def test_config_validation():
    with pytest.raises(ValueError):
        fa.AdvConfig(delta=-1.0)
    with pytest.raises(ValueError):
        fa.AdvConfig(delta=300.0)
    with pytest.raises(ValueError):
        fa.AdvConfig(max_iterations=0)


def test_identical_pair_rejected(net7):
    img = np.full((3, 32, 32), 100.0)
    with pytest.raises(DegenerateInputError):
        fa.feature_opt(net7, img, img, cfg())


def test_near_guide_optimum_inside_box(net7, small_corpus):
    source = small_corpus.images[0]
    guide = np.clip(source + 0.5, 0.0, 255.0)
    res = fa.feature_opt(net7, source, guide, cfg(delta=10.0, grad_tol=1e-10,
                                                  ftol=0.0))
    assert res.trajectory[-1][1] < 1e-12
    a_rep = fa.representation(net7, res.adversarial_image, "fc2")
    g_rep = fa.representation(net7, guide, "fc2")
    assert np.abs(a_rep - g_rep).max() < 1e-6


def test_delta_zero_returns_source(net7, small_corpus):
    source = small_corpus.images[0]
    guide = small_corpus.images[7]
    res = fa.feature_opt(net7, source, guide, cfg(delta=0.0))
    assert np.array_equal(res.adversarial_image, source)
    assert res.final_ratio == pytest.approx(1.0)
    assert len(res.trajectory) == 1


def test_feature_opt_contract(net7, small_corpus):
    source = small_corpus.images[0]
    guide = small_corpus.images[7]
    res = fa.feature_opt(net7, source, guide, cfg(delta=10.0))
    assert np.abs(res.perturbation).max() <= 10.0 + 1e-9
    assert res.adversarial_image.min() >= 0.0
    assert res.adversarial_image.max() <= 255.0
    assert np.array_equal(res.adversarial_image,
                          source + res.perturbation)
    objs = [o for _, o, _ in res.trajectory]
    assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))
    assert res.final_ratio < 1.0
    assert res.final_ratio >= 0.0


def test_feature_opt_determinism(net7, small_corpus):
    source = small_corpus.images[1]
    guide = small_corpus.images[10]
    r1 = fa.feature_opt(net7, source, guide, cfg())
    r2 = fa.feature_opt(net7, source, guide, cfg())
    assert np.array_equal(r1.adversarial_image, r2.adversarial_image)
    assert r1.trajectory == r2.trajectory


def test_trajectory_ratio_matches_representations(net7, small_corpus):
    source = small_corpus.images[2]
    guide = small_corpus.images[13]
    res = fa.feature_opt(net7, source, guide, cfg(delta=10.0))
    g_rep = fa.representation(net7, guide, "fc2")
    s_rep = fa.representation(net7, source, "fc2")
    a_rep = fa.representation(net7, res.adversarial_image, "fc2")
    d_sg = np.linalg.norm(s_rep - g_rep)
    assert res.final_ratio == pytest.approx(np.linalg.norm(a_rep - g_rep) / d_sg,
                                            rel=1e-9)


def _linear_net():
    spec = N.NetworkSpec((2, 3, 3), (("fc", L.fully_connected(6)),))
    return fa.init_network(spec, seed=2, scheme="gaussian")


def test_feature_linear_exact_on_linear_net():
    net = _linear_net()
    rng = np.random.default_rng(0)
    source = rng.uniform(50, 200, (2, 3, 3))
    guide = rng.uniform(50, 200, (2, 3, 3))
    c = cfg(layer="fc", delta=20.0)
    r_lin = fa.feature_linear(net, source, guide, c)
    r_opt = fa.feature_opt(net, source, guide, c)
    assert np.abs(r_lin.adversarial_image - r_opt.adversarial_image).max() < 1e-8
    for (i1, f1, q1), (i2, f2, q2) in zip(r_lin.trajectory, r_opt.trajectory):
        assert i1 == i2
        assert abs(f1 - f2) <= 1e-10 * max(1.0, abs(f1))
        assert abs(q1 - q2) <= 1e-10


def test_feature_linear_objective_at_source_is_true_distance(net7, small_corpus):
    source = small_corpus.images[3]
    guide = small_corpus.images[16]
    res = fa.feature_linear(net7, source, guide, cfg(max_iterations=1))
    s_rep = fa.representation(net7, source, "fc2")
    g_rep = fa.representation(net7, guide, "fc2")
    assert res.trajectory[0][1] == pytest.approx(
        float(np.sum((s_rep - g_rep) ** 2)), rel=1e-12)


def test_feature_linear_ratio_is_true_representation(net7, small_corpus):
    source = small_corpus.images[4]
    guide = small_corpus.images[19]
    res = fa.feature_linear(net7, source, guide, cfg())
    g_rep = fa.representation(net7, guide, "fc2")
    s_rep = fa.representation(net7, source, "fc2")
    a_rep = fa.representation(net7, res.adversarial_image, "fc2")
    want = np.linalg.norm(a_rep - g_rep) / np.linalg.norm(s_rep - g_rep)
    assert res.final_ratio == pytest.approx(want, rel=1e-9)


def test_feat_fgrad_structure(net7, small_corpus):
    source = small_corpus.images[5]
    guide = small_corpus.images[20]
    out = fa.feat_fgrad(net7, source, guide, "fc2", 10.0)
    pert = out - source
    on_budget = np.isclose(np.abs(pert), 10.0)
    on_clamp = np.isclose(out, 0.0) | np.isclose(out, 255.0)
    zero_grad = np.isclose(pert, 0.0)
    assert np.all(on_budget | on_clamp | zero_grad)


def test_feat_fgrad_decreases_distance(net7, full_corpus):
    from featadv.experiment import sample_pairs
    hits = 0
    for s, g in sample_pairs(full_corpus, 40, seed=3):
        source, guide = full_corpus.images[s], full_corpus.images[g]
        g_rep = fa.representation(net7, guide, "fc2")
        before = np.linalg.norm(fa.representation(net7, source, "fc2") - g_rep)
        out = fa.feat_fgrad(net7, source, guide, "fc2", 10.0)
        after = np.linalg.norm(fa.representation(net7, out, "fc2") - g_rep)
        hits += after < before
    assert hits >= 38


def test_label_fgrad(net7_head, small_corpus):
    source = small_corpus.images[0]
    target = 3
    loss0, _ = adv.label_loss_grad(net7_head, source, target)
    out = fa.label_fgrad(net7_head, source, target, 10.0)
    loss1, _ = adv.label_loss_grad(net7_head, out, target)
    assert loss1 < loss0
    pert = out - source
    assert np.all(np.isclose(np.abs(pert), 10.0)
                  | np.isclose(out, 0.0) | np.isclose(out, 255.0)
                  | np.isclose(pert, 0.0))
    assert np.array_equal(fa.label_fgrad(net7_head, source, target, 0.0), source)


def test_label_fgrad_requires_head(net7):
    with pytest.raises(SpecError):
        fa.label_fgrad(net7, np.zeros((3, 32, 32)), 0, 10.0)


def test_label_loss_grad_finite_difference(net7_head, small_corpus):
    img = small_corpus.images[1]
    loss, g = adv.label_loss_grad(net7_head, img, 2)
    rng = np.random.default_rng(4)
    for _ in range(5):
        i = tuple(rng.integers(0, s) for s in img.shape)
        h = 1e-4
        up = img.copy(); up[i] += h
        dn = img.copy(); dn[i] -= h
        fu, _ = adv.label_loss_grad(net7_head, up, 2, check_range=False)
        fd, _ = adv.label_loss_grad(net7_head, dn, 2, check_range=False)
        est = (fu - fd) / (2 * h)
        assert abs(est - g[i]) <= 1e-4 * max(1.0, abs(est))


def test_label_opt(net7_head, small_corpus):
    source = small_corpus.images[2]
    label0, _ = fa.classify(net7_head, source)
    target = (label0 + 1) % 10
    res = adv.label_opt(net7_head, source, target, cfg(max_iterations=500))
    label1, _ = fa.classify(net7_head, res.adversarial_image)
    assert label1 == target
    assert res.penalty_weight is not None
    l_src, _ = adv.label_loss_grad(net7_head, source, target)
    l_adv, _ = adv.label_loss_grad(net7_head, res.adversarial_image, target)
    assert l_adv < l_src
    assert math.isnan(res.final_ratio)


def test_label_opt_rejects_fixed_point(net7_head, small_corpus):
    source = small_corpus.images[3]
    label0, _ = fa.classify(net7_head, source)
    with pytest.raises(DegenerateInputError):
        adv.label_opt(net7_head, source, label0, cfg())


def test_label_opt_no_adversary_carries_margin(net7_head, small_corpus):
    source = small_corpus.images[4]
    label0, _ = fa.classify(net7_head, source)
    target = (label0 + 1) % 10

    # a 1-iteration budget cannot flip the label from a converged start
    tiny = fa.AdvConfig(max_iterations=1, grad_tol=1e30)
    with pytest.raises(NoAdversaryError) as err:
        adv.label_opt(net7_head, source, target, tiny)
    assert err.value.best_margin < 0
