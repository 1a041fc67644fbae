"""Depth accuracy metrics, temporal flicker, and corner repeatability.

Predictions are clamped to the evaluation range, never rescaled: the
pipeline claims metric depth, so a global scale error must show up in
AbsRel instead of being silently divided away.

The corner detector is a segment test on the radius-3 Bresenham circle:
a pixel is a corner when at least arc_length contiguous ring pixels are
all brighter than center + delta or all darker than center - delta. The
default arc_length is 9 because the discretized ring leaves exactly 11
contiguous outside pixels at an axis-aligned square corner and 8 along a
straight edge, so 9 separates the two. A corner's score is the summed
margin over its best qualifying arc (the true corner of a square sees
the longest arc, so it strictly outranks its neighbors), and greedy
non-maximum suppression (score, then row, then column) keeps the output
deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .frames import DepthMap, ThermalFrame

# radius-3 Bresenham ring, (dy, dx), circular order
RING = ((-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
        (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2),
        (-3, -1))


@dataclass(frozen=True)
class EvalConfig:
    min_depth: float = 0.3
    max_depth: float = 10.0
    thresholds: tuple = (1.25, 1.25 ** 2, 1.25 ** 3)
    corner_delta: float = 15.0
    arc_length: int = 9
    nonmax_radius: float = 4.0
    repeat_radius: float = 3.0

    def __post_init__(self):
        t = self.thresholds
        if not all(a > 1 for a in t) or not all(
                t[i] < t[i + 1] for i in range(len(t) - 1)):
            raise ValueError("thresholds must be strictly increasing and > 1")
        if not 1 <= self.arc_length <= len(RING):
            raise ValueError(f"arc_length must be in [1, {len(RING)}]")


def _depth_arrays(d):
    if isinstance(d, DepthMap):
        return d.depth, d.valid
    arr = np.asarray(d, dtype=np.float64)
    return arr, np.ones(arr.shape, dtype=bool)


def depth_metrics(pred, gt, cfg: EvalConfig = EvalConfig()):
    """(absrel, rmse, a1, a2, a3) over valid in-range pixels.

    Ground truth restricted to [min_depth, max_depth]; predictions clamped
    to the same range first.
    """
    p, _ = _depth_arrays(pred)
    g, valid = _depth_arrays(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    sel = valid & (g >= cfg.min_depth) & (g <= cfg.max_depth)
    if not sel.any():
        raise ValueError("no valid pixels to evaluate")
    pc = np.clip(p[sel], cfg.min_depth, cfg.max_depth)
    gc = g[sel]
    absrel = float(np.mean(np.abs(pc - gc) / gc))
    rmse = float(np.sqrt(np.mean((pc - gc) ** 2)))
    ratio = np.maximum(pc / gc, gc / pc)
    accs = tuple(float(np.mean(ratio < t)) for t in cfg.thresholds)
    return (absrel, rmse) + accs


def _image_scale(arr: np.ndarray) -> float:
    if arr.dtype == np.uint8:
        return 255.0
    if arr.dtype == np.uint16:
        return 65535.0
    if arr.dtype.kind == "f":
        return 1.0
    raise ValueError(f"unsupported image dtype {arr.dtype}")


def flicker(frames) -> float:
    """Mean consecutive-frame mean |difference| on the [0, 1] scale."""
    arrs = [f.pixels if isinstance(f, ThermalFrame) else np.asarray(f)
            for f in frames]
    if len(arrs) < 2:
        raise ValueError("flicker needs at least 2 frames")
    scale = _image_scale(arrs[0])
    for a in arrs[1:]:
        if a.shape != arrs[0].shape or a.dtype != arrs[0].dtype:
            raise ValueError("frames must share shape and mode")
    deltas = [np.mean(np.abs(b.astype(np.float64) - a.astype(np.float64)))
              for a, b in zip(arrs, arrs[1:])]
    return float(np.mean(deltas)) / scale


def depth_flicker(preds, static_mask=None) -> float:
    """Mean |depth_{t+1} - depth_t| in meters over static pixels."""
    arrs = [p.depth if isinstance(p, DepthMap) else np.asarray(
        p, dtype=np.float64) for p in preds]
    if len(arrs) < 2:
        raise ValueError("depth_flicker needs at least 2 frames")
    if static_mask is None:
        static_mask = np.ones(arrs[0].shape, dtype=bool)
    vals = [np.mean(np.abs(b - a)[static_mask])
            for a, b in zip(arrs, arrs[1:])]
    return float(np.mean(vals))


def _ring_stack(img: np.ndarray):
    """Ring values for every interior pixel: shape (16, H-6, W-6)."""
    h, w = img.shape
    core = np.s_[3:h - 3, 3:w - 3]
    stack = np.empty((len(RING), h - 6, w - 6), dtype=np.float64)
    for k, (dy, dx) in enumerate(RING):
        stack[k] = img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx]
    return stack, img[core].astype(np.float64)


def _best_arc(margins: np.ndarray, n: int) -> float:
    """Largest margin sum over circular contiguous positive runs >= n."""
    pos = margins > 0
    if pos.all():
        return float(margins.sum())
    k = len(margins)
    ext_pos = np.concatenate([pos, pos])
    ext_m = np.concatenate([margins, margins])
    best = 0.0
    i = 0
    while i < k:
        # only walk maximal runs, i.e. starts whose circular predecessor
        # is outside the run
        if not pos[i] or pos[i - 1]:
            i += 1
            continue
        j = i
        while ext_pos[j]:
            j += 1
        if j - i >= n:
            best = max(best, float(ext_m[i:j].sum()))
        i = j + 1
    return best


def detect_corners(image: np.ndarray, cfg: EvalConfig = EvalConfig()):
    """Segment-test corners as a list of (x, y, score), suppressed."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("detector expects a single-channel image")
    if img.shape[0] < 7 or img.shape[1] < 7:
        return []
    ring, center = _ring_stack(img.astype(np.float64))
    n = cfg.arc_length

    # vectorized candidate pass: some length-n window all positive
    bright = ring - center - cfg.corner_delta
    dark = center - cfg.corner_delta - ring
    fires = np.zeros(center.shape, dtype=bool)
    for margin in (bright, dark):
        tiled = np.concatenate([margin, margin[:n - 1]], axis=0)
        for k in range(len(RING)):
            fires |= tiled[k:k + n].min(axis=0) > 0
    ys, xs = np.nonzero(fires)
    if ys.size == 0:
        return []
    scores = np.array([max(_best_arc(bright[:, y, x], n),
                           _best_arc(dark[:, y, x], n))
                       for y, x in zip(ys, xs)])
    ys = ys + 3
    xs = xs + 3
    # greedy suppression: strongest first, ties by (y, x) for determinism
    order = np.lexsort((xs, ys, -scores))
    kept = []
    for i in order:
        y, x, s = int(ys[i]), int(xs[i]), float(scores[i])
        ok = True
        for (kx, ky, _) in kept:
            if (kx - x) ** 2 + (ky - y) ** 2 <= cfg.nonmax_radius ** 2:
                ok = False
                break
        if ok:
            kept.append((x, y, s))
    return kept


def repeatability(frames, motion_gt, cfg: EvalConfig = EvalConfig()) -> float:
    """Fraction of corners re-detected after the known per-frame shift.

    For each consecutive pair, frame-t corners are warped by
    motion_gt[t+1] = (dy, dx); a warped corner counts as matched when some
    corner detected in frame t+1 lies within repeat_radius. Pairs where
    either frame detects nothing (or every warped corner leaves the
    detectable interior) contribute 0 and raise a warning.
    """
    if motion_gt is None:
        raise ValueError("repeatability requires motion_gt")
    arrs = [f.pixels if isinstance(f, ThermalFrame) else np.asarray(f)
            for f in frames]
    motion = np.asarray(motion_gt, dtype=np.float64)
    if motion.shape[0] != len(arrs):
        raise ValueError("motion_gt length must match frames")
    h, w = arrs[0].shape

    scores = []
    for t in range(len(arrs) - 1):
        ca = detect_corners(arrs[t], cfg)
        cb = detect_corners(arrs[t + 1], cfg)
        dy, dx = motion[t + 1]
        if not ca or not cb:
            warnings.warn(f"repeatability: empty detection in pair {t}")
            scores.append(0.0)
            continue
        bpts = np.array([(x, y) for (x, y, _) in cb], dtype=np.float64)
        matched = considered = 0
        for (x, y, _) in ca:
            wx, wy = x + dx, y + dy
            if not (3 <= wx < w - 3 and 3 <= wy < h - 3):
                continue
            considered += 1
            d2 = ((bpts[:, 0] - wx) ** 2 + (bpts[:, 1] - wy) ** 2).min()
            if d2 <= cfg.repeat_radius ** 2:
                matched += 1
        if considered == 0:
            warnings.warn(f"repeatability: no warped corner stays in "
                          f"frame for pair {t}")
            scores.append(0.0)
        else:
            scores.append(matched / considered)
    if not scores:
        raise ValueError("repeatability needs at least 2 frames")
    return float(np.mean(scores))
