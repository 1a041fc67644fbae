"""Shared value types for thermal frames, depth maps, and sequences.

A ThermalFrame is in *raw* mode when its pixel array has an integer dtype
(sensor counts, nominally 16-bit) and in *normalized* mode when it is
floating point in [0, 1]. Depth is always meters internally; millimeter
integers exist only at the file-format boundary.

Frames, depth maps, and sequences are treated as immutable value objects
after construction. Invariant checks that may legitimately fail on foreign
data are reported by `validate_sequence` instead of raised, so that a bad
dataset can be described rather than half-loaded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

RAW_MAX = 65535


@dataclass(frozen=True)
class ThermalFrame:
    """One thermal image plus acquisition metadata."""

    pixels: np.ndarray
    timestamp: float
    frame_index: int
    radiometric: bool = True
    width: int = field(init=False)
    height: int = field(init=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "height", int(px.shape[0]))
        object.__setattr__(self, "width", int(px.shape[1]))

    @property
    def normalized(self) -> bool:
        return self.pixels.dtype.kind == "f"


@dataclass(frozen=True)
class DepthMap:
    """Dense metric depth with a validity mask. Invalid pixels carry no
    meaning and are excluded from every loss and metric."""

    depth: np.ndarray
    valid: np.ndarray
    min_depth: float = 0.3
    max_depth: float = 10.0

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if d.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {d.shape}")
        if v.shape != d.shape:
            raise ValueError(f"valid mask shape {v.shape} != depth {d.shape}")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)


@dataclass(frozen=True)
class SequenceSample:
    """An ordered thermal sequence with per-frame depth ground truth.

    motion_gt, when present, is a (T, 2) array of per-frame background
    translation (dy, dx) in pixels relative to the previous frame; row 0 is
    zero. Only synthetic data carries it (used for repeatability warping).
    """

    frames: list
    depths: list
    sequence_id: str
    motion_gt: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("sequence must contain at least one frame")
        if self.motion_gt is not None:
            m = np.asarray(self.motion_gt, dtype=np.float64)
            if m.ndim != 2 or m.shape[1] != 2:
                raise ValueError(f"motion_gt must be (T, 2), got {m.shape}")
            object.__setattr__(self, "motion_gt", m)

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation summary. Accuracy thresholds a1..a3 use ratios 1.25^k."""

    absrel: float
    rmse: float
    a1: float
    a2: float
    a3: float
    flicker: float
    repeatability: float
    n_pixels_evaluated: int
    config_hash: str

    def __post_init__(self):
        if not (0.0 <= self.a1 <= self.a2 <= self.a3 <= 1.0):
            raise ValueError(
                f"accuracies must satisfy 0 <= a1 <= a2 <= a3 <= 1, "
                f"got ({self.a1}, {self.a2}, {self.a3})")
        if self.absrel < 0 or self.rmse < 0:
            raise ValueError("absrel and rmse must be non-negative")

    def as_dict(self) -> dict:
        return {
            "absrel": self.absrel, "rmse": self.rmse,
            "a1": self.a1, "a2": self.a2, "a3": self.a3,
            "flicker": self.flicker, "repeatability": self.repeatability,
            "n_pixels_evaluated": self.n_pixels_evaluated,
            "config_hash": self.config_hash,
        }


def validate_sequence(sample: SequenceSample) -> list:
    """Check every sequence invariant; return one message per violation.

    Returns an empty list iff the sample is well formed. Violations name
    the frame index and the invariant they break; nothing is raised.
    """
    problems = []
    n_f, n_d = len(sample.frames), len(sample.depths)
    if n_f != n_d:
        problems.append(
            f"length mismatch: {n_f} frames but {n_d} depth maps")

    ref_shape = sample.frames[0].pixels.shape
    prev_ts = None
    for i, fr in enumerate(sample.frames):
        px = fr.pixels
        if px.shape != ref_shape:
            problems.append(
                f"frame {i}: shape {px.shape} differs from {ref_shape}")
        if fr.normalized:
            if px.size and (px.min() < 0.0 or px.max() > 1.0):
                problems.append(
                    f"frame {i}: normalized intensities outside [0, 1]")
        else:
            if px.size and (int(px.min()) < 0 or int(px.max()) > RAW_MAX):
                problems.append(
                    f"frame {i}: raw intensities outside [0, {RAW_MAX}]")
        if fr.width <= 0 or fr.height <= 0:
            problems.append(f"frame {i}: non-positive dimensions")
        if prev_ts is not None and fr.timestamp <= prev_ts:
            problems.append(
                f"frame {i}: timestamp {fr.timestamp} not strictly greater "
                f"than previous {prev_ts}")
        prev_ts = fr.timestamp

    for i, dm in enumerate(sample.depths[:n_f]):
        if dm.depth.shape != ref_shape:
            problems.append(
                f"depth {i}: shape {dm.depth.shape} differs from frame "
                f"shape {ref_shape}")
        if dm.min_depth <= 0:
            problems.append(f"depth {i}: min_depth {dm.min_depth} <= 0")
        if dm.max_depth <= dm.min_depth:
            problems.append(
                f"depth {i}: max_depth {dm.max_depth} <= min_depth "
                f"{dm.min_depth}")
        vals = dm.depth[dm.valid]
        if vals.size and not np.all(np.isfinite(vals)):
            problems.append(f"depth {i}: non-finite depth at valid pixels")
        if vals.size and vals.min() < 0:
            problems.append(f"depth {i}: negative depth at valid pixels")

    if sample.motion_gt is not None and sample.motion_gt.shape[0] != n_f:
        problems.append(
            f"motion_gt has {sample.motion_gt.shape[0]} rows for {n_f} "
            f"frames")
    return problems


def raw_to_normalized(frame: ThermalFrame) -> ThermalFrame:
    """Convert raw counts to [0, 1]: pixel / 65535. Metadata is preserved.

    Raises on already-normalized input so accidental double division is
    caught at the boundary.
    """
    if frame.normalized:
        raise ValueError("frame is already normalized")
    px = frame.pixels.astype(np.float32) / np.float32(RAW_MAX)
    return ThermalFrame(pixels=px, timestamp=frame.timestamp,
                        frame_index=frame.frame_index,
                        radiometric=frame.radiometric)
