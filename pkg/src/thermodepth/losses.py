"""The four training loss terms and their weighted composite.

All terms accept the prediction as an autodiff Tensor (or a plain array /
DepthMap when gradients are not needed) and restrict themselves to valid
pixels: invalid pixels are excluded by index gathering or window masking,
so their gradient is exactly zero rather than merely small.

Empty-mask corner cases return 0 and emit a warning instead of raising,
so a stray all-invalid frame cannot kill a training run.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .frames import DepthMap, ThermalFrame


@dataclass(frozen=True)
class LossWeights:
    """Composite weights: silog, ssim, ordinal, smoothness."""

    lambda1: float = 0.9
    lambda2: float = 0.4
    lambda3: float = 0.1
    lambda4: float = 0.1

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be nonnegative")


def _pred_tensor(pred) -> Tensor:
    if isinstance(pred, Tensor):
        return pred
    if isinstance(pred, DepthMap):
        return Tensor(pred.depth)
    return Tensor(np.asarray(pred, dtype=np.float64))


def _gt_parts(gt):
    if isinstance(gt, DepthMap):
        return gt.depth, gt.valid, gt.min_depth, gt.max_depth
    arr = np.asarray(gt, dtype=np.float64)
    return arr, np.ones(arr.shape, dtype=bool), 0.3, 10.0


def _guide_tensor(guide) -> Tensor:
    if isinstance(guide, ThermalFrame):
        if not guide.normalized:
            raise ValueError("smoothness guide must be a normalized frame")
        return Tensor(np.asarray(guide.pixels, dtype=np.float64))
    if isinstance(guide, Tensor):
        return guide
    return Tensor(np.asarray(guide, dtype=np.float64))


def _zero_like(pred: Tensor) -> Tensor:
    # keep the graph alive so callers can still call backward()
    return ad.sum_(pred * Tensor(np.zeros(pred.shape, dtype=pred.dtype)))


def silog_loss(pred, gt, lambda_si: float = 0.5) -> Tensor:
    """Scale-invariant log loss over valid, strictly positive pixels.

    (1/n) sum d_i^2 - (lambda_si/n^2) (sum d_i)^2 with d = log pred - log gt.
    lambda_si = 1 makes the loss exactly invariant to global scale.
    """
    p = _pred_tensor(pred)
    g, valid, _, _ = _gt_parts(gt)
    mask = valid & (g > 0) & (p.data > 0)
    idx = np.flatnonzero(mask.ravel())
    n = idx.size
    if n == 0:
        warnings.warn("silog_loss: no valid pixels, returning 0")
        return _zero_like(p)
    d = ad.log(ad.take_flat(p, idx)) - Tensor(np.log(g.ravel()[idx]))
    mean_sq = ad.sum_(d * d) * (1.0 / n)
    sum_d = ad.sum_(d)
    return mean_sq - (sum_d * sum_d) * (lambda_si / (n * n))


def _mean_pool3(x: Tensor) -> Tensor:
    k = np.full((1, 1, 3, 3), 1.0 / 9.0, dtype=x.dtype)
    return ad.conv2d(x, Tensor(k))


def ssim_loss(pred, gt) -> Tensor:
    """Structural-similarity loss on depth normalized to [0, 1].

    3x3 mean pooling, C1 = 0.01^2, C2 = 0.03^2; windows containing any
    invalid pixel are dropped from the mean, so masked pixels carry no
    gradient. Returns mean((1 - SSIM) / 2), which lies in [0, 1].
    """
    p = _pred_tensor(pred)
    g, valid, dmin, dmax = _gt_parts(gt)
    h, w = g.shape
    if h < 3 or w < 3:
        warnings.warn("ssim_loss: image smaller than the 3x3 window")
        return _zero_like(p)

    scale = 1.0 / (dmax - dmin)
    pn = (p - dmin) * scale
    gn = (np.asarray(g, dtype=np.float64) - dmin) * scale
    # zero out invalid pixels; only fully-valid windows survive below
    m = valid.astype(p.dtype)
    pn = pn * Tensor(m)
    gn = gn * m

    win_ok = np.flatnonzero(
        (_mean_pool3(Tensor(m.reshape(1, 1, h, w))).data > 1 - 1e-12).ravel())
    if win_ok.size == 0:
        warnings.warn("ssim_loss: no fully valid 3x3 window, returning 0")
        return _zero_like(p)

    p4 = ad.reshape(pn, 1, 1, h, w)
    g4 = Tensor(gn.reshape(1, 1, h, w))
    mu_p = _mean_pool3(p4)
    mu_g = _mean_pool3(g4)
    var_p = _mean_pool3(p4 * p4) - mu_p * mu_p
    var_g = _mean_pool3(g4 * g4) - mu_g * mu_g
    cov = _mean_pool3(p4 * g4) - mu_p * mu_g

    c1, c2 = 0.01 ** 2, 0.03 ** 2
    ssim = ((mu_p * mu_g * 2.0 + c1) * (cov * 2.0 + c2)) \
        / ((mu_p * mu_p + mu_g * mu_g + c1) * (var_p + var_g + c2))
    kept = ad.take_flat(ssim, win_ok)
    return ad.sum_((-kept + 1.0) * 0.5) * (1.0 / win_ok.size)


def sample_ordinal_pairs(valid: np.ndarray, n_pairs: int, seed):
    """Flat index pairs drawn uniformly from valid pixels."""
    rng = np.random.default_rng(seed)
    flat = np.flatnonzero(valid.ravel())
    ia = flat[rng.integers(0, flat.size, n_pairs)]
    ib = flat[rng.integers(0, flat.size, n_pairs)]
    return ia, ib


def ordinal_loss(pred, gt, n_pairs: int = 512,
                 ratio_threshold: float = 1.02, seed=0) -> Tensor:
    """Pairwise depth-ordering loss over seeded random valid-pixel pairs.

    Pairs whose ground-truth ratio exceeds the threshold get a logistic
    ranking penalty log(1 + exp(-r (pred_a - pred_b))); near-equal pairs
    get (pred_a - pred_b)^2 instead.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    p = _pred_tensor(pred)
    g, valid, _, _ = _gt_parts(gt)
    if np.count_nonzero(valid) < 2:
        warnings.warn("ordinal_loss: fewer than 2 valid pixels, returning 0")
        return _zero_like(p)

    ia, ib = sample_ordinal_pairs(valid, n_pairs, seed)
    ga, gb = g.ravel()[ia], g.ravel()[ib]
    r = np.zeros(n_pairs)
    with np.errstate(divide="ignore", invalid="ignore"):
        r[ga > ratio_threshold * gb] = 1.0
        r[gb > ratio_threshold * ga] = -1.0

    diff = ad.take_flat(p, ia) - ad.take_flat(p, ib)
    ranked = (r != 0).astype(p.dtype)
    rank_term = ad.softplus(diff * Tensor(-r)) * Tensor(ranked)
    tie_term = diff * diff * Tensor(1.0 - ranked)
    return ad.sum_(rank_term + tie_term) * (1.0 / n_pairs)


def smoothness_loss(pred, guide, alpha: float = 1.0, valid=None) -> Tensor:
    """Edge-aware first-order smoothness on mean-normalized depth.

    Forward differences of d* = pred / mean(pred) are weighted by
    exp(-alpha |forward difference of guide|); differences touching an
    invalid pixel are dropped. Each direction is averaged over its own
    retained differences so a 1-D ramp comes out as slope / mean.
    """
    p = _pred_tensor(pred)
    gd = _guide_tensor(guide)
    if valid is None:
        valid = np.ones(p.shape, dtype=bool)
    if isinstance(pred, DepthMap):
        valid = pred.valid

    idx = np.flatnonzero(valid.ravel())
    if idx.size == 0:
        warnings.warn("smoothness_loss: no valid pixels, returning 0")
        return _zero_like(p)
    mean_pred = ad.sum_(ad.take_flat(p, idx)) * (1.0 / idx.size)
    dstar = p / mean_pred

    terms = []
    for axis in (1, 0):
        if axis == 1:
            dd = dstar[:, 1:] - dstar[:, :-1]
            gg = gd[:, 1:] - gd[:, :-1]
            mm = valid[:, 1:] & valid[:, :-1]
        else:
            dd = dstar[1:, :] - dstar[:-1, :]
            gg = gd[1:, :] - gd[:-1, :]
            mm = valid[1:, :] & valid[:-1, :]
        n = np.count_nonzero(mm)
        if n == 0:
            continue
        # the guide stays in the graph: when it is itself a prediction
        # (a refined frame), its parameters feel the edge weights too
        wgt = ad.exp(ad.abs_(gg) * (-alpha))
        kept = ad.abs_(dd) * wgt * Tensor(mm.astype(p.dtype))
        terms.append(ad.sum_(kept) * (1.0 / n))
    if not terms:
        return _zero_like(p)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def total_loss(pred, gt, guide, weights: LossWeights = LossWeights(),
               lambda_si: float = 0.5, n_pairs: int = 512,
               ratio_threshold: float = 1.02, alpha: float = 1.0,
               seed=0):
    """Weighted composite of the four terms plus a per-term breakdown."""
    _, valid, _, _ = _gt_parts(gt)
    l1 = silog_loss(pred, gt, lambda_si=lambda_si)
    l2 = ssim_loss(pred, gt)
    l3 = ordinal_loss(pred, gt, n_pairs=n_pairs,
                      ratio_threshold=ratio_threshold, seed=seed)
    l4 = smoothness_loss(pred, guide, alpha=alpha, valid=valid)
    total = l1 * weights.lambda1 + l2 * weights.lambda2 \
        + l3 * weights.lambda3 + l4 * weights.lambda4
    breakdown = {"silog": float(l1.data), "ssim": float(l2.data),
                 "ordinal": float(l3.data), "smoothness": float(l4.data),
                 "total": float(total.data)}
    return total, breakdown
