"""Encoder-decoder depth network with a squeezed recurrent bottleneck.

The encoder is a stem convolution (level 0, full resolution) followed by L
downsampling stages; every stage is a strided 3x3 convolution plus one
backbone-specific refinement block (plain residual, depthwise-separable,
or inverted-bottleneck). The decoder upsamples back level by level,
concatenating the matching encoder skip before each convolution, and the
head squashes into (min_depth, max_depth) so depth losses are always
finite.

Between encoder and decoder sits the recurrent bottleneck interface:
latent_squeeze pools the bottleneck to a K-vector for the reservoir path,
and readout_inject adds the recurrent output back onto the bottleneck as a
spatially broadcast residual. The ConvGRU path works on the grid directly
and re-injects through a 1x1 convolution, also residually, so disabling
either block (zero output) leaves the feed-forward network intact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

_STREAM_ENCODER = 10
_STREAM_DECODER = 11
_STREAM_LATENT = 12
_STREAM_READOUT = 13

BACKBONES = ("tiny-residual", "tiny-mobile", "tiny-efficient")


@dataclass(frozen=True)
class BackboneConfig:
    """Shape contract of the encoder-decoder."""

    name: str = "tiny-efficient"
    channels: tuple = (16, 32, 64, 128)
    height: int = 64
    width: int = 80
    latent_k: int = 128

    def __post_init__(self):
        if self.name not in BACKBONES:
            raise ValueError(f"unknown backbone {self.name!r}; "
                             f"expected one of {BACKBONES}")
        if self.levels < 2:
            raise ValueError("need at least 2 downsampling stages")
        object.__setattr__(self, "channels", tuple(self.channels))
        div = 2 ** self.levels
        if self.height % div or self.width % div:
            raise ValueError(
                f"input {self.height}x{self.width} must be divisible by "
                f"2^L = {div}")
        if self.height // div < 2 or self.width // div < 2:
            raise ValueError("bottleneck would be smaller than 2x2")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def bottleneck_channels(self) -> int:
        return self.channels[-1]

    @property
    def bottleneck_hw(self) -> tuple:
        d = 2 ** self.levels
        return self.height // d, self.width // d

    def level_channels(self) -> list:
        # level 0 is the stem at input resolution
        return [self.channels[0]] + list(self.channels)


@dataclass
class FeaturePyramid:
    """Encoder activations, level 0 (input resolution) .. L (bottleneck)."""

    levels: list

    def __post_init__(self):
        h0, w0 = self.levels[0].shape[2], self.levels[0].shape[3]
        for i, lv in enumerate(self.levels):
            if lv.shape[2] != h0 >> i or lv.shape[3] != w0 >> i:
                raise ValueError(f"level {i} has shape {lv.shape}, expected "
                                 f"spatial {(h0 >> i, w0 >> i)}")

    @property
    def bottleneck(self) -> Tensor:
        return self.levels[-1]


def _conv_init(rng, cout, cin, k, dtype, gain=2.0):
    std = np.sqrt(gain / (cin * k * k))
    w = Tensor(rng.normal(0, std, (cout, cin, k, k)).astype(dtype),
               requires_grad=True)
    b = Tensor(np.zeros(cout, dtype), requires_grad=True)
    return w, b


def _dw_init(rng, c, dtype):
    std = np.sqrt(2.0 / 9)
    w = Tensor(rng.normal(0, std, (c, 3, 3)).astype(dtype),
               requires_grad=True)
    b = Tensor(np.zeros(c, dtype), requires_grad=True)
    return w, b


@dataclass
class EncoderParams:
    config: BackboneConfig
    stem: tuple
    stages: list  # per stage: {"down": (w, b), "block": [(w, b), ...]}

    def tensors(self) -> dict:
        out = {"encoder.stem.w": self.stem[0], "encoder.stem.b": self.stem[1]}
        for i, st in enumerate(self.stages):
            out[f"encoder.stage{i}.down.w"] = st["down"][0]
            out[f"encoder.stage{i}.down.b"] = st["down"][1]
            for j, (w, b) in enumerate(st["block"]):
                out[f"encoder.stage{i}.block{j}.w"] = w
                out[f"encoder.stage{i}.block{j}.b"] = b
        return out


def init_encoder(seed, config: BackboneConfig,
                 dtype=np.float32) -> EncoderParams:
    rng = np.random.default_rng([seed, _STREAM_ENCODER])
    stem = _conv_init(rng, config.channels[0], 1, 3, dtype)
    stages = []
    cin = config.channels[0]
    for cout in config.channels:
        down = _conv_init(rng, cout, cin, 3, dtype)
        if config.name == "tiny-residual":
            block = [_conv_init(rng, cout, cout, 3, dtype),
                     _conv_init(rng, cout, cout, 3, dtype)]
        elif config.name == "tiny-mobile":
            block = [_dw_init(rng, cout, dtype),
                     _conv_init(rng, cout, cout, 1, dtype)]
        else:  # tiny-efficient: expand, depthwise, project
            block = [_conv_init(rng, 2 * cout, cout, 1, dtype),
                     _dw_init(rng, 2 * cout, dtype),
                     _conv_init(rng, cout, 2 * cout, 1, dtype)]
        stages.append({"down": down, "block": block})
        cin = cout
    return EncoderParams(config=config, stem=stem, stages=stages)


def _apply_block(h: Tensor, name: str, block) -> Tensor:
    if name == "tiny-residual":
        (w1, b1), (w2, b2) = block
        r = ad.elu(ad.conv2d(h, w1, b1, padding=1))
        r = ad.conv2d(r, w2, b2, padding=1)
        return ad.elu(r + h)
    if name == "tiny-mobile":
        (dw, db), (pw, pb) = block
        r = ad.elu(ad.depthwise_conv2d(h, dw, db, padding=1))
        return ad.elu(ad.conv2d(r, pw, pb))
    (ew, eb), (dw, db), (pw, pb) = block
    r = ad.elu(ad.conv2d(h, ew, eb))
    r = ad.elu(ad.depthwise_conv2d(r, dw, db, padding=1))
    r = ad.conv2d(r, pw, pb)
    return ad.elu(r + h)


def encode(y, params: EncoderParams) -> FeaturePyramid:
    """Run the encoder on (N, 1, H, W) input in [0, 1]."""
    x = y if isinstance(y, Tensor) else Tensor(np.asarray(y))
    cfg = params.config
    div = 2 ** cfg.levels
    if x.shape[2] % div or x.shape[3] % div:
        raise ValueError(
            f"input {x.shape[2]}x{x.shape[3]} not divisible by 2^L = {div}")
    h = ad.elu(ad.conv2d(x, params.stem[0], params.stem[1], padding=1))
    levels = [h]
    for st in params.stages:
        h = ad.elu(ad.conv2d(h, st["down"][0], st["down"][1],
                             stride=2, padding=1))
        h = _apply_block(h, cfg.name, st["block"])
        levels.append(h)
    return FeaturePyramid(levels=levels)


@dataclass
class LatentParams:
    """1x1 squeeze of the bottleneck before global average pooling."""

    w: Tensor
    b: Tensor

    def tensors(self) -> dict:
        return {"latent.w": self.w, "latent.b": self.b}


def init_latent(seed, config: BackboneConfig, dtype=np.float32):
    rng = np.random.default_rng([seed, _STREAM_LATENT])
    w, b = _conv_init(rng, config.latent_k, config.bottleneck_channels, 1,
                      dtype, gain=1.0)
    return LatentParams(w=w, b=b)


def latent_squeeze(bottleneck: Tensor, params: LatentParams) -> Tensor:
    """(N, C, h, w) -> (N, K): 1x1 convolution then global average pool."""
    z = ad.conv2d(bottleneck, params.w, params.b)
    return ad.mean(z, axis=(2, 3))


@dataclass
class ReadoutParams:
    """Dense map from recurrent output back to bottleneck channels."""

    w: Tensor
    b: Tensor

    def tensors(self) -> dict:
        return {"readout.w": self.w, "readout.b": self.b}


def init_readout(seed, config: BackboneConfig, rb_out_dim: int,
                 dtype=np.float32):
    rng = np.random.default_rng([seed, _STREAM_READOUT])
    std = np.sqrt(1.0 / rb_out_dim)
    w = Tensor(rng.normal(0, std, (config.bottleneck_channels,
                                   rb_out_dim)).astype(dtype),
               requires_grad=True)
    b = Tensor(np.zeros(config.bottleneck_channels, dtype),
               requires_grad=True)
    return ReadoutParams(w=w, b=b)


def readout_inject(pyramid: FeaturePyramid, rb_out: Tensor,
                   params: ReadoutParams) -> FeaturePyramid:
    """Residually add dense(rb_out), broadcast over space, to level L."""
    if rb_out.ndim == 1:
        rb_out = ad.reshape(rb_out, 1, rb_out.shape[0])
    if rb_out.shape[1] != params.w.shape[1]:
        raise ValueError(f"recurrent output size {rb_out.shape[1]} != "
                         f"readout input {params.w.shape[1]}")
    mod = rb_out @ ad.transpose(params.w) + params.b
    n, c = mod.shape
    bottom = pyramid.bottleneck + ad.reshape(mod, n, c, 1, 1)
    return FeaturePyramid(levels=list(pyramid.levels[:-1]) + [bottom])


@dataclass
class GruInjectParams:
    """1x1 residual projection of the ConvGRU grid output."""

    w: Tensor
    b: Tensor

    def tensors(self) -> dict:
        return {"gru_inject.w": self.w, "gru_inject.b": self.b}


def init_gru_inject(seed, config: BackboneConfig, dtype=np.float32):
    rng = np.random.default_rng([seed, _STREAM_READOUT])
    c = config.bottleneck_channels
    w, b = _conv_init(rng, c, c, 1, dtype, gain=1.0)
    return GruInjectParams(w=w, b=b)


def gru_inject(pyramid: FeaturePyramid, rb_grid: Tensor,
               params: GruInjectParams) -> FeaturePyramid:
    if rb_grid.shape != pyramid.bottleneck.shape:
        raise ValueError(f"recurrent grid {rb_grid.shape} != bottleneck "
                         f"{pyramid.bottleneck.shape}")
    bottom = pyramid.bottleneck + ad.conv2d(rb_grid, params.w, params.b)
    return FeaturePyramid(levels=list(pyramid.levels[:-1]) + [bottom])


@dataclass
class DecoderParams:
    config: BackboneConfig
    convs: list  # one (w, b) per upsampling step, bottleneck-first
    head: tuple

    def tensors(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"decoder.up{i}.w"] = w
            out[f"decoder.up{i}.b"] = b
        out["decoder.head.w"] = self.head[0]
        out["decoder.head.b"] = self.head[1]
        return out


def init_decoder(seed, config: BackboneConfig,
                 dtype=np.float32) -> DecoderParams:
    rng = np.random.default_rng([seed, _STREAM_DECODER])
    lv_ch = config.level_channels()
    convs = []
    cur = lv_ch[-1]
    for lvl in range(config.levels - 1, -1, -1):
        cout = lv_ch[lvl]
        convs.append(_conv_init(rng, cout, cur + lv_ch[lvl], 3, dtype))
        cur = cout
    head = _conv_init(rng, 1, cur, 3, dtype, gain=1.0)
    return DecoderParams(config=config, convs=convs, head=head)


def decode(pyramid: FeaturePyramid, params: DecoderParams,
           min_depth: float = 0.3, max_depth: float = 10.0) -> Tensor:
    """Upsample with per-level skip concatenation; squash to depth range.

    Returns (N, 1, H, W) with every value strictly inside
    (min_depth, max_depth).
    """
    h = pyramid.bottleneck
    n_steps = len(params.convs)
    for i, (w, b) in enumerate(params.convs):
        skip = pyramid.levels[n_steps - 1 - i]
        h = ad.upsample2x(h)
        h = ad.elu(ad.conv2d(ad.concat([h, skip], axis=1), w, b, padding=1))
    logit = ad.conv2d(h, params.head[0], params.head[1], padding=1)
    return ad.sigmoid(logit) * (max_depth - min_depth) + min_depth
