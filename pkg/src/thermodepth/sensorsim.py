"""Synthetic thermal/depth sequence generation and sensor behavior.

Scenes are rendered with a 2.5-D parallax model: a textured background
plane plus flat sprites drawn back to front, each moving on screen at
velocity + camera_translation * (background_depth / sprite_depth), so
nearer sprites move faster under camera motion. Depth ground truth is the
front-most surface at each pixel, quantized to whole millimeters so the
file round trip is exact.

apply_sensor turns the clean radiometric stream into what a consumer
thermal camera delivers: slow sinusoidal drift from internal heating,
Gaussian read noise, per-frame AGC percentile remapping (the histogram
instability the depth network must survive), and NUC stream freezes where
the previous frame is repeated.

All randomness flows from one per-sequence seed through named sub-streams,
so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .frames import RAW_MAX, DepthMap, SequenceSample, ThermalFrame

FRAME_DT = 0.1  # seconds between frames

_STREAM_TEXTURE = 0
_STREAM_NOISE = 1


@dataclass(frozen=True)
class Sprite:
    """A flat constant-temperature object at a fixed depth.

    size is the side length (rect) or diameter (disk) in pixels; position
    is the initial center (y, x); velocity is intrinsic screen motion in
    px/frame on top of camera-induced parallax.
    """

    shape: str
    size: float
    depth: float
    temperature: float
    velocity: tuple = (0.0, 0.0)
    position: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise ValueError(f"unknown sprite shape {self.shape!r}")
        if self.depth <= 0:
            raise ValueError("sprite depth must be positive")


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic description of one synthetic sequence."""

    background_depth: float
    sprites: tuple = ()
    camera_translation: tuple = (0.0, 0.0)
    seed: int = 0
    n_frames: int = 8
    width: int = 80
    height: int = 64
    background_temperature: float = 20000.0
    texture_amplitude: float = 2000.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("frame dimensions must be positive")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.background_depth <= 0:
            raise ValueError("background_depth must be positive")
        object.__setattr__(self, "sprites", tuple(self.sprites))


@dataclass(frozen=True)
class SensorModel:
    """Non-radiometric camera behavior knobs.

    agc_percentiles are the clip points of the per-frame linear remap
    (lo -> 0, hi -> 65535). nuc_interval = 0 disables stream freezes.
    """

    agc_percentiles: tuple = (1.0, 99.0)
    drift_amplitude: float = 0.0
    drift_period: int = 60
    nuc_interval: int = 0
    nuc_freeze_len: int = 2
    noise_sigma: float = 0.0
    radiometric: bool = False

    def __post_init__(self):
        lo, hi = self.agc_percentiles
        if not (0.0 <= lo < hi <= 100.0):
            raise ValueError(f"bad agc_percentiles ({lo}, {hi})")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.nuc_interval > 0 and self.nuc_freeze_len < 1:
            raise ValueError("nuc_freeze_len must be >= 1 when NUC enabled")
        if self.drift_amplitude != 0 and self.drift_period <= 0:
            raise ValueError("drift_period must be positive when drifting")


def _background_texture(spec: SceneSpec) -> np.ndarray:
    """Smooth toroidal temperature field around the background level."""
    rng = np.random.default_rng([spec.seed, _STREAM_TEXTURE])
    noise = rng.standard_normal((spec.height, spec.width))
    smooth = gaussian_filter(noise, sigma=3.0, mode="wrap")
    peak = np.abs(smooth).max()
    if peak > 0:
        smooth = smooth / peak
    return spec.background_temperature + spec.texture_amplitude * smooth


def _sample_wrap(tex: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Bilinear sample of a toroidal texture shifted by (dy, dx) pixels."""
    h, w = tex.shape
    ys = (np.arange(h)[:, None] + dy) % h
    xs = (np.arange(w)[None, :] + dx) % w
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy, fx = ys - y0, xs - x0
    y1, x1 = (y0 + 1) % h, (x0 + 1) % w
    top = tex[y0 % h, x0 % w] * (1 - fx) + tex[y0 % h, x1] * fx
    bot = tex[y1, x0 % w] * (1 - fx) + tex[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _sprite_mask(sp: Sprite, center, height: int, width: int) -> np.ndarray:
    cy, cx = center
    yy = np.arange(height)[:, None] - cy
    xx = np.arange(width)[None, :] - cx
    half = sp.size / 2.0
    if sp.shape == "rect":
        return (np.abs(yy) <= half) & (np.abs(xx) <= half)
    return yy * yy + xx * xx <= half * half


def render_sequence(spec: SceneSpec) -> SequenceSample:
    """Render the radiometric ground-truth sequence for a scene.

    Returns raw 16-bit frames, exact per-pixel depth (front-most surface,
    mm-quantized), and motion_gt holding the background's per-frame screen
    shift (row 0 is zero).
    """
    tex = _background_texture(spec)
    cam = np.asarray(spec.camera_translation, dtype=np.float64)
    # far-to-near so nearer sprites overwrite farther ones
    order = sorted(spec.sprites, key=lambda s: -s.depth)

    frames, depths = [], []
    motion = np.zeros((spec.n_frames, 2))
    motion[1:] = cam
    for t in range(spec.n_frames):
        off = cam * t
        thermal = _sample_wrap(tex, off[0], off[1])
        depth_mm = np.full((spec.height, spec.width),
                           round(spec.background_depth * 1000), dtype=np.int64)
        for sp in order:
            speed = np.asarray(sp.velocity, dtype=np.float64) \
                + cam * (spec.background_depth / sp.depth)
            center = np.asarray(sp.position, dtype=np.float64) + speed * t
            mask = _sprite_mask(sp, center, spec.height, spec.width)
            thermal[mask] = sp.temperature
            depth_mm[mask] = round(sp.depth * 1000)
        px = np.clip(np.rint(thermal), 0, RAW_MAX).astype(np.uint16)
        frames.append(ThermalFrame(pixels=px, timestamp=t * FRAME_DT,
                                   frame_index=t, radiometric=True))
        depths.append(DepthMap(depth=depth_mm / 1000.0,
                               valid=np.ones_like(depth_mm, dtype=bool)))
    return SequenceSample(frames=frames, depths=depths,
                          sequence_id=f"scene-{spec.seed}", motion_gt=motion)


def _agc_remap(px: np.ndarray, lo_pct: float, hi_pct: float) -> np.ndarray:
    p_lo, p_hi = np.percentile(px, [lo_pct, hi_pct])
    if p_hi <= p_lo:
        # constant frame: nothing to stretch
        return np.zeros_like(px, dtype=np.float64)
    out = (px.astype(np.float64) - p_lo) * (RAW_MAX / (p_hi - p_lo))
    return np.clip(out, 0.0, RAW_MAX)


def _sequence_seed(sequence_id: str) -> int:
    digest = hashlib.sha256(sequence_id.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def apply_sensor(seq: SequenceSample, model: SensorModel,
                 seed=None) -> SequenceSample:
    """Run the camera model over a radiometric sequence.

    Per frame, in order: drift offset, Gaussian noise, AGC remap (skipped
    in radiometric mode), then NUC freezes that repeat the previous output
    frame. Output frames are re-quantized to integer counts. Depth maps
    pass through untouched. The noise stream is seeded from `seed`, or
    deterministically from the sequence id when seed is None.
    """
    for fr in seq.frames:
        if fr.normalized:
            raise ValueError("apply_sensor expects raw-mode frames")
    if seed is None:
        seed = _sequence_seed(seq.sequence_id)
    rng = np.random.default_rng([seed, _STREAM_NOISE])

    n = len(seq.frames)
    frozen = np.zeros(n, dtype=bool)
    if model.nuc_interval > 0:
        for t in range(model.nuc_interval, n, model.nuc_interval):
            frozen[t:t + model.nuc_freeze_len] = True
    frozen[0] = False  # nothing earlier to repeat

    out_frames = []
    for t, fr in enumerate(seq.frames):
        if frozen[t]:
            px = out_frames[-1].pixels.copy()
        else:
            vals = fr.pixels.astype(np.float64)
            if model.drift_amplitude != 0:
                vals = vals + model.drift_amplitude * np.sin(
                    2.0 * np.pi * t / model.drift_period)
            if model.noise_sigma > 0:
                vals = vals + rng.normal(0.0, model.noise_sigma, vals.shape)
            if not model.radiometric:
                vals = _agc_remap(vals, *model.agc_percentiles)
            px = np.clip(np.rint(vals), 0, RAW_MAX).astype(np.uint16)
        out_frames.append(ThermalFrame(
            pixels=px, timestamp=fr.timestamp, frame_index=fr.frame_index,
            radiometric=model.radiometric))
    return SequenceSample(frames=out_frames, depths=list(seq.depths),
                          sequence_id=seq.sequence_id,
                          motion_gt=seq.motion_gt)


class DatasetError(ValueError):
    """A dataset directory violates the on-disk layout contract."""


def _write_png16(path: Path, arr: np.ndarray):
    Image.fromarray(arr.astype(np.uint16)).save(path)


def _read_png16(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint16)


def write_dataset(samples, root):
    """Write sequences under root, one directory per sequence.

    Layout per sequence: thermal/%06d.png (16-bit counts), depth/%06d.png
    (16-bit millimeters, 0 = invalid), index.csv, meta.json. The nuc_flag
    column marks frames that exactly repeat their predecessor.
    """
    root = Path(root)
    for s in samples:
        sdir = root / s.sequence_id
        (sdir / "thermal").mkdir(parents=True, exist_ok=True)
        (sdir / "depth").mkdir(parents=True, exist_ok=True)
        prev = None
        rows = []
        for i, (fr, dm) in enumerate(zip(s.frames, s.depths)):
            if fr.normalized:
                raise ValueError("datasets store raw-mode frames only")
            _write_png16(sdir / "thermal" / f"{i:06d}.png", fr.pixels)
            mm = np.where(dm.valid,
                          np.rint(dm.depth * 1000.0).astype(np.int64), 0)
            if np.any(mm > RAW_MAX) or np.any(mm[dm.valid] < 1):
                raise ValueError(
                    f"frame {i}: valid depth outside representable "
                    f"(0.001, 65.535] m range")
            _write_png16(sdir / "depth" / f"{i:06d}.png", mm)
            nuc = int(prev is not None and np.array_equal(fr.pixels, prev))
            rows.append((fr.frame_index, repr(float(fr.timestamp)), nuc))
            prev = fr.pixels
        with open(sdir / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "timestamp", "nuc_flag"])
            w.writerows(rows)
        meta = {
            "sequence_id": s.sequence_id,
            "radiometric": bool(s.frames[0].radiometric),
            "min_depth": s.depths[0].min_depth,
            "max_depth": s.depths[0].max_depth,
            "motion_gt": None if s.motion_gt is None
            else s.motion_gt.tolist(),
        }
        with open(sdir / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=1)


def read_dataset(root) -> list:
    """Load every sequence directory under root; inverse of write_dataset."""
    root = Path(root)
    seq_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not seq_dirs:
        raise DatasetError(f"no sequence directories under {root}")
    return [_read_sequence(p) for p in seq_dirs]


def _read_sequence(sdir: Path) -> SequenceSample:
    index_path = sdir / "index.csv"
    if not index_path.exists():
        raise DatasetError(f"{sdir}: missing index.csv")
    meta_path = sdir / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"{sdir}: missing meta.json")
    with open(meta_path) as fh:
        meta = json.load(fh)

    with open(index_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DatasetError(f"{sdir}: empty index.csv")

    frames, depths = [], []
    prev_ts = None
    for i, row in enumerate(rows):
        ts = float(row["timestamp"])
        if prev_ts is not None and ts <= prev_ts:
            raise DatasetError(
                f"{sdir}: timestamps not strictly increasing at row {i} "
                f"({ts} after {prev_ts})")
        prev_ts = ts
        tpath = sdir / "thermal" / f"{i:06d}.png"
        dpath = sdir / "depth" / f"{i:06d}.png"
        if not tpath.exists():
            raise DatasetError(f"{sdir}: missing thermal frame {i:06d}")
        if not dpath.exists():
            raise DatasetError(f"{sdir}: missing depth frame {i:06d}")
        px = _read_png16(tpath)
        mm = _read_png16(dpath)
        if mm.shape != px.shape:
            raise DatasetError(
                f"{sdir}: frame {i} depth shape {mm.shape} != thermal "
                f"{px.shape}")
        frames.append(ThermalFrame(
            pixels=px, timestamp=ts, frame_index=int(row["frame_index"]),
            radiometric=bool(meta["radiometric"])))
        depths.append(DepthMap(
            depth=mm.astype(np.float64) / 1000.0, valid=mm != 0,
            min_depth=float(meta["min_depth"]),
            max_depth=float(meta["max_depth"])))
    motion = meta.get("motion_gt")
    return SequenceSample(
        frames=frames, depths=depths, sequence_id=meta["sequence_id"],
        motion_gt=None if motion is None else np.asarray(motion))
