"""Loss terms against brute-force loop oracles and hand-worked values."""

import math

import numpy as np
import pytest

from thermodepth import autodiff as ad
from thermodepth.autodiff import Tensor
from thermodepth.frames import DepthMap
from thermodepth.losses import (LossWeights, ordinal_loss,
                                sample_ordinal_pairs, silog_loss,
                                smoothness_loss, ssim_loss, total_loss)


# ---------------------------------------------------------------- oracles

def oracle_silog(pred, gt, valid, lam):
    ds = []
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            if valid[i, j] and gt[i, j] > 0 and pred[i, j] > 0:
                ds.append(math.log(pred[i, j]) - math.log(gt[i, j]))
    if not ds:
        return 0.0
    n = len(ds)
    return sum(d * d for d in ds) / n - lam * sum(ds) ** 2 / (n * n)


def oracle_ssim(pred, gt, valid, dmin, dmax):
    pn = (pred - dmin) / (dmax - dmin) * valid
    gn = (gt - dmin) / (dmax - dmin) * valid
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    h, w = pred.shape
    for i in range(h - 2):
        for j in range(w - 2):
            if not valid[i:i + 3, j:j + 3].all():
                continue
            pw = pn[i:i + 3, j:j + 3]
            gw = gn[i:i + 3, j:j + 3]
            mp, mg = pw.mean(), gw.mean()
            vp = (pw * pw).mean() - mp * mp
            vg = (gw * gw).mean() - mg * mg
            cov = (pw * gw).mean() - mp * mg
            s = ((2 * mp * mg + c1) * (2 * cov + c2)) \
                / ((mp * mp + mg * mg + c1) * (vp + vg + c2))
            vals.append((1 - s) / 2)
    return float(np.mean(vals)) if vals else 0.0


def oracle_ordinal(pred, gt, valid, n_pairs, thr, seed):
    ia, ib = sample_ordinal_pairs(valid, n_pairs, seed)
    pf, gf = pred.ravel(), gt.ravel()
    acc = 0.0
    for a, b in zip(ia, ib):
        if gf[a] > thr * gf[b]:
            acc += math.log1p(math.exp(-(pf[a] - pf[b])))
        elif gf[b] > thr * gf[a]:
            acc += math.log1p(math.exp(pf[a] - pf[b]))
        else:
            acc += (pf[a] - pf[b]) ** 2
    return acc / n_pairs


def oracle_smooth(pred, guide, valid, alpha):
    m = pred[valid].mean()
    d = pred / m
    out = 0.0
    for axis, (ddiff, gdiff, mm) in enumerate([
            (d[:, 1:] - d[:, :-1], guide[:, 1:] - guide[:, :-1],
             valid[:, 1:] & valid[:, :-1]),
            (d[1:, :] - d[:-1, :], guide[1:, :] - guide[:-1, :],
             valid[1:, :] & valid[:-1, :])]):
        vals = [abs(dd) * math.exp(-alpha * abs(gg))
                for dd, gg, ok in zip(ddiff.ravel(), gdiff.ravel(),
                                      mm.ravel()) if ok]
        if vals:
            out += sum(vals) / len(vals)
    return out


def random_instance(seed, shape=(8, 10), with_mask=True):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 8.0, shape)
    pred = np.clip(gt * rng.uniform(0.7, 1.4, shape), 0.31, 9.9)
    valid = rng.random(shape) > 0.2 if with_mask else np.ones(shape, bool)
    guide = rng.random(shape)
    return pred, gt, valid, guide


# ------------------------------------------------------ oracle agreement

@pytest.mark.parametrize("seed", range(20))
def test_all_terms_match_oracles(seed):
    pred, gt, valid, guide = random_instance(seed)
    dm = DepthMap(depth=gt, valid=valid, min_depth=0.3, max_depth=10.0)

    got = float(silog_loss(Tensor(pred), dm, lambda_si=0.5).data)
    assert abs(got - oracle_silog(pred, gt, valid, 0.5)) < 1e-10

    got = float(ssim_loss(Tensor(pred), dm).data)
    assert abs(got - oracle_ssim(pred, gt, valid, 0.3, 10.0)) < 1e-10

    got = float(ordinal_loss(Tensor(pred), dm, n_pairs=256,
                             ratio_threshold=1.02, seed=seed).data)
    assert abs(got - oracle_ordinal(pred, gt, valid, 256, 1.02, seed)) < 1e-10

    got = float(smoothness_loss(Tensor(pred), guide, alpha=1.0,
                                valid=valid).data)
    assert abs(got - oracle_smooth(pred, guide, valid, 1.0)) < 1e-10


def test_total_is_recomposition():
    pred, gt, valid, guide = random_instance(99)
    dm = DepthMap(depth=gt, valid=valid)
    w = LossWeights()
    tot, br = total_loss(Tensor(pred), dm, guide, weights=w, seed=5)
    expect = 0.9 * br["silog"] + 0.4 * br["ssim"] + 0.1 * br["ordinal"] \
        + 0.1 * br["smoothness"]
    assert abs(float(tot.data) - expect) < 1e-12
    assert abs(br["total"] - expect) < 1e-12


def test_total_linear_in_weights():
    pred, gt, valid, guide = random_instance(7)
    dm = DepthMap(depth=gt, valid=valid)
    kw = dict(seed=3)
    t_a, _ = total_loss(Tensor(pred), dm, guide,
                        weights=LossWeights(1, 0, 0, 0), **kw)
    t_b, _ = total_loss(Tensor(pred), dm, guide,
                        weights=LossWeights(0, 1, 1, 0), **kw)
    t_ab, _ = total_loss(Tensor(pred), dm, guide,
                         weights=LossWeights(2, 3, 3, 0), **kw)
    assert abs(2 * float(t_a.data) + 3 * float(t_b.data)
               - float(t_ab.data)) < 1e-12


def test_zero_weights_zero_loss():
    pred, gt, valid, guide = random_instance(1)
    dm = DepthMap(depth=gt, valid=valid)
    tot, _ = total_loss(Tensor(pred), dm, guide,
                        weights=LossWeights(0, 0, 0, 0))
    assert float(tot.data) == 0.0


# ------------------------------------------------------ hand-worked cases

def test_silog_identity_and_hand_value():
    gt = np.array([[2.0, 2.0]])
    assert float(silog_loss(gt, gt).data) == 0.0
    got = float(silog_loss(np.array([[1.0, 4.0]]), gt, lambda_si=0.5).data)
    assert abs(got - math.log(2) ** 2) < 1e-12


def test_silog_scale_invariant_at_lambda_one():
    rng = np.random.default_rng(0)
    gt = rng.uniform(1.0, 5.0, (8, 10))
    got = float(silog_loss(gt * 1.7, gt, lambda_si=1.0).data)
    assert abs(got) < 1e-15


def test_ssim_identity_and_anticorrelated():
    rng = np.random.default_rng(2)
    gt = rng.uniform(0.5, 9.5, (8, 10))
    dm = DepthMap(depth=gt, valid=np.ones_like(gt, bool))
    assert float(ssim_loss(gt, dm).data) < 1e-12

    checker = np.indices((8, 10)).sum(axis=0) % 2
    gt2 = np.where(checker, 9.0, 1.0)
    pred2 = 10.0 - gt2  # inverted contrast
    dm2 = DepthMap(depth=gt2, valid=np.ones_like(gt2, bool))
    loss = float(ssim_loss(pred2, dm2).data)
    assert loss > 0.25
    assert 0.0 <= loss <= 1.0


def test_ssim_bounded_on_random_inputs():
    for seed in range(5):
        pred, gt, valid, _ = random_instance(seed)
        dm = DepthMap(depth=gt, valid=valid)
        v = float(ssim_loss(pred, dm).data)
        assert 0.0 <= v <= 1.0


def test_ordinal_hand_value_on_separated_pair():
    # grid of two pixels, gt 3 and 1; cross pairs hit the hand value
    gt = np.array([[3.0, 1.0]])
    valid = np.ones_like(gt, bool)
    n = 4000
    ia, ib = sample_ordinal_pairs(valid, n, seed=8)
    cross = np.count_nonzero(ia != ib)
    got = float(ordinal_loss(gt, gt, n_pairs=n, seed=8).data)
    expect = cross * math.log1p(math.exp(-2.0)) / n
    assert abs(got - expect) < 1e-12


def test_ordinal_tie_and_inversion():
    gt = np.full((4, 4), 2.0)
    assert float(ordinal_loss(gt, gt, n_pairs=64, seed=1).data) == 0.0

    gt2 = np.array([[3.0, 1.0]])
    correct = float(ordinal_loss(np.array([[3.0, 1.0]]), gt2,
                                 n_pairs=512, seed=2).data)
    inverted = float(ordinal_loss(np.array([[1.0, 3.0]]), gt2,
                                  n_pairs=512, seed=2).data)
    assert inverted > correct


def test_smoothness_ramp_hand_value():
    pred = np.array([[1.0, 2.0, 3.0, 4.0]])
    guide = np.zeros_like(pred)
    got = float(smoothness_loss(pred, guide).data)
    assert abs(got - 0.4) < 1e-12  # slope 1 / mean 2.5

    # constant prediction: zero
    const = np.full((5, 6), 3.3)
    assert float(smoothness_loss(const, np.zeros((5, 6))).data) == 0.0


def test_smoothness_edge_aware():
    pred = np.array([[1.0, 2.0, 3.0, 4.0]])
    flat_guide = np.zeros_like(pred)
    edge_guide = np.array([[0.0, 1.0, 0.0, 1.0]])
    flat = float(smoothness_loss(pred, flat_guide, alpha=4.0).data)
    edged = float(smoothness_loss(pred, edge_guide, alpha=4.0).data)
    assert edged < flat


def test_smoothness_guide_gradient_matches_fd():
    # the guide can itself be a prediction, so its gradient must be live
    rng = np.random.default_rng(5)
    pred = Tensor(rng.uniform(1.0, 3.0, (8, 10)))
    guide = Tensor(rng.random((8, 10)), requires_grad=True)
    smoothness_loss(pred, guide).backward()
    g = guide.grad
    eps = 1e-7
    for (i, j) in [(0, 0), (3, 4), (7, 9), (5, 0)]:
        vals = []
        for sgn in (1.0, -1.0):
            nudged = guide.data.copy()
            nudged[i, j] += sgn * eps
            vals.append(float(smoothness_loss(
                Tensor(pred.data), Tensor(nudged)).data))
        fd = (vals[0] - vals[1]) / (2 * eps)
        assert abs(fd - g[i, j]) < 1e-6 * max(1.0, abs(fd))


# ------------------------------------------------------ gradient contract

def test_total_loss_gradient_matches_fd():
    pred, gt, valid, guide = random_instance(42)
    dm = DepthMap(depth=gt, valid=valid)
    leaf = Tensor(pred, requires_grad=True)
    tot, _ = total_loss(leaf, dm, guide, seed=11)
    tot.backward()
    ana = leaf.grad

    eps = 1e-6
    num = np.zeros_like(pred)
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            for s, tgt in ((eps, 1), (-eps, -1)):
                p2 = pred.copy()
                p2[i, j] += s
                t2, _ = total_loss(Tensor(p2), dm, guide, seed=11)
                num[i, j] += tgt * float(t2.data)
            num[i, j] /= 2 * eps
    denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-6)
    assert (np.abs(num - ana) / denom).max() < 1e-4


def test_masked_pixels_have_exactly_zero_gradient():
    pred, gt, valid, guide = random_instance(13)
    dm = DepthMap(depth=gt, valid=valid)
    for fn in (lambda p: silog_loss(p, dm),
               lambda p: ssim_loss(p, dm),
               lambda p: ordinal_loss(p, dm, n_pairs=128, seed=4),
               lambda p: smoothness_loss(p, guide, valid=valid),
               lambda p: total_loss(p, dm, guide, seed=4)[0]):
        leaf = Tensor(pred, requires_grad=True)
        fn(leaf).backward()
        assert np.all(leaf.grad[~valid] == 0.0)


def test_empty_mask_warns_and_returns_zero():
    gt = np.ones((4, 5))
    dm = DepthMap(depth=gt, valid=np.zeros((4, 5), bool))
    leaf = Tensor(np.ones((4, 5)) * 2.0, requires_grad=True)
    with pytest.warns(UserWarning):
        out = silog_loss(leaf, dm)
    assert float(out.data) == 0.0
    out.backward()  # graph stays alive
    assert np.all(leaf.grad == 0.0)
    with pytest.warns(UserWarning):
        assert float(ordinal_loss(leaf, dm).data) == 0.0
    with pytest.warns(UserWarning):
        assert float(ssim_loss(leaf, dm).data) == 0.0


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(-0.1, 0.4, 0.1, 0.1)
