"""Thermal refinement network and the classical enhancement baselines.

The refinement network is a small residual convolution stack: four 3x3
convolutions (1 -> 16 -> 16 -> 16 -> 1) with ELU between layers, the input
added back through a trainable scalar gain, and a final squash
s(z) = sigmoid(4 z) that bounds the output to (0, 1). With every weight at
zero the pre-squash activation is zero everywhere, so the output is a
constant 0.5 image; at the default init the gain is 1 and the head bias
-0.5, which makes the net start out close to an identity remap.

The baselines (linear 8-bit, Gaussian smoothing, CLAHE) and the colormap
output are plain numpy/scipy image ops, not part of the trained model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.ndimage import gaussian_filter

from . import autodiff as ad
from .autodiff import Tensor
from .frames import ThermalFrame

RECEPTIVE_FIELD = 9  # four stacked 3x3 convolutions
SQUASH_GAIN = 4.0  # sigmoid(4 z): s(0) = 0.5 with unit slope at 0


@dataclass
class RefineParams:
    """Trainable refinement parameters (the theta group).

    layers holds (weight, bias) Tensor pairs in application order;
    residual_gain scales the input skip added before the squash.
    """

    layers: list
    residual_gain: Tensor
    nonlinearity: str = "elu"
    display: str = "colormap"

    def tensors(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"refine.conv{i}.w"] = w
            out[f"refine.conv{i}.b"] = b
        out["refine.residual_gain"] = self.residual_gain
        return out

    def count(self) -> int:
        return sum(t.size for t in self.tensors().values())


def init_refine(seed=0, channels=(16, 16, 16), dtype=np.float32) -> RefineParams:
    rng = np.random.default_rng([seed, 3])
    widths = (1,) + tuple(channels) + (1,)
    layers = []
    for i in range(len(widths) - 1):
        cin, cout = widths[i], widths[i + 1]
        std = np.sqrt(2.0 / (cin * 9))
        w = Tensor(rng.normal(0, std, (cout, cin, 3, 3)).astype(dtype),
                   requires_grad=True)
        # head bias -0.5 centers the squash on mid-range inputs
        bias = -0.5 if i == len(widths) - 2 else 0.0
        b = Tensor(np.full(cout, bias, dtype=dtype), requires_grad=True)
        layers.append((w, b))
    params = RefineParams(layers=layers,
                          residual_gain=Tensor(np.array(1.0, dtype=dtype),
                                               requires_grad=True))
    if params.count() > 100_000:
        raise ValueError("refinement net exceeds the lightweight budget")
    return params


def refine_tensor(x: Tensor, params: RefineParams) -> Tensor:
    """Differentiable core: x is (N, 1, H, W) in [0, 1], output likewise."""
    h, w = x.shape[2], x.shape[3]
    if h < RECEPTIVE_FIELD or w < RECEPTIVE_FIELD:
        raise ValueError(
            f"input {h}x{w} smaller than the {RECEPTIVE_FIELD}px "
            f"receptive field")
    act = x
    last = len(params.layers) - 1
    for i, (wt, bt) in enumerate(params.layers):
        act = ad.conv2d(act, wt, bt, padding=1)
        if i != last:
            act = ad.elu(act)
    pre = act + x * params.residual_gain
    return ad.sigmoid(pre * SQUASH_GAIN)


def refine(frame: ThermalFrame, params: RefineParams) -> ThermalFrame:
    """Refine one normalized frame; metadata passes through."""
    if not frame.normalized:
        raise ValueError("refine expects a normalized frame")
    dtype = params.layers[0][0].dtype
    x = Tensor(frame.pixels.astype(dtype)[None, None])
    y = refine_tensor(x, params)
    return ThermalFrame(pixels=y.data[0, 0], timestamp=frame.timestamp,
                        frame_index=frame.frame_index,
                        radiometric=frame.radiometric)


def to_8bit_linear(frame) -> np.ndarray:
    """Per-frame min-max map of raw counts to [0, 255]; constant -> zeros."""
    px = frame.pixels if isinstance(frame, ThermalFrame) else np.asarray(frame)
    if px.dtype.kind == "f":
        raise ValueError("to_8bit_linear expects raw counts")
    lo, hi = int(px.min()), int(px.max())
    if hi == lo:
        return np.zeros(px.shape, dtype=np.uint8)
    out = (px.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.rint(out).astype(np.uint8)


def refined_to_8bit(frame: ThermalFrame) -> np.ndarray:
    """Quantize a refined [0, 1] image for display."""
    if not frame.normalized:
        raise ValueError("expected a normalized frame")
    return np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)


def gaussian_smooth(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding on an 8-bit image."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    sm = gaussian_filter(image.astype(np.float64), sigma, mode="reflect")
    return np.clip(np.rint(sm), 0, 255).astype(np.uint8)


def _tile_mapping(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """Clipped-histogram equalization map for one tile: value -> 8-bit."""
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    n = tile.size
    if np.isfinite(clip_limit):
        limit = max(clip_limit * n / 256.0, 1.0)
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / 256.0
    cdf = np.cumsum(hist) / n
    return np.rint(cdf * 255.0).astype(np.uint8)


def clahe(image: np.ndarray, clip_limit: float = 2.0,
          tiles=(8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Tile mappings are round(cdf * 255) of the clip-redistributed histogram;
    pixel outputs bilinearly blend the four nearest tile-center mappings.
    clip_limit is relative to the uniform bin height (inf disables clipping).
    """
    nx, ny = tiles
    if nx < 1 or ny < 1:
        raise ValueError("tile counts must be >= 1")
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError("clahe expects an 8-bit image")
    h, w = img.shape
    ys = np.linspace(0, h, ny + 1).astype(int)
    xs = np.linspace(0, w, nx + 1).astype(int)
    maps = np.empty((ny, nx, 256), dtype=np.float64)
    cy = np.empty(ny)
    cx = np.empty(nx)
    for ti in range(ny):
        cy[ti] = (ys[ti] + ys[ti + 1] - 1) / 2.0
        for tj in range(nx):
            cx[tj] = (xs[tj] + xs[tj + 1] - 1) / 2.0
            maps[ti, tj] = _tile_mapping(
                img[ys[ti]:ys[ti + 1], xs[tj]:xs[tj + 1]], clip_limit)

    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    ti = np.clip(np.searchsorted(cy, yy) - 1, 0, max(ny - 2, 0))
    tj = np.clip(np.searchsorted(cx, xx) - 1, 0, max(nx - 2, 0))
    if ny > 1:
        fy = np.clip((yy - cy[ti]) / (cy[ti + 1] - cy[ti]), 0.0, 1.0)
    else:
        ti, fy = np.zeros(h, int), np.zeros(h)
    if nx > 1:
        fx = np.clip((xx - cx[tj]) / (cx[tj + 1] - cx[tj]), 0.0, 1.0)
    else:
        tj, fx = np.zeros(w, int), np.zeros(w)

    ti2 = np.minimum(ti + 1, ny - 1)
    tj2 = np.minimum(tj + 1, nx - 1)
    tig, tjg = np.meshgrid(ti, tj, indexing="ij")
    ti2g, tj2g = np.meshgrid(ti2, tj2, indexing="ij")
    fyg, fxg = np.meshgrid(fy, fx, indexing="ij")
    v = img.astype(int)
    m00 = maps[tig, tjg, v]
    m01 = maps[tig, tj2g, v]
    m10 = maps[ti2g, tjg, v]
    m11 = maps[ti2g, tj2g, v]
    top = m00 * (1 - fxg) + m01 * fxg
    bot = m10 * (1 - fxg) + m11 * fxg
    return np.rint(top * (1 - fyg) + bot * fyg).astype(np.uint8)


def load_colormap() -> np.ndarray:
    """The shipped 256-entry monotone-luminance color table, uint8 RGB."""
    rows = []
    ref = resources.files("thermodepth").joinpath("data/ironbow.csv")
    with ref.open() as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["r"]), int(row["g"]), int(row["b"])))
    table = np.array(rows, dtype=np.uint8)
    if table.shape != (256, 3):
        raise ValueError(f"colormap table has shape {table.shape}")
    return table


_COLORMAP_CACHE = None


def colorize(frame: ThermalFrame) -> np.ndarray:
    """Map a normalized frame through the fixed color table -> (H, W, 3)."""
    global _COLORMAP_CACHE
    if not frame.normalized:
        raise ValueError("colorize expects a normalized frame")
    if _COLORMAP_CACHE is None:
        _COLORMAP_CACHE = load_colormap()
    idx = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(int)
    return _COLORMAP_CACHE[idx]
