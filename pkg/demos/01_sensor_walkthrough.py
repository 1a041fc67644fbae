"""
What a non-radiometric thermal camera does to a clean scene
===========================================================

Renders one synthetic scene twice: once as the clean radiometric
ground truth, once through the camera model (offset drift, noise, AGC
re-scaling, NUC freezes). The printout shows why consecutive 8-bit
frames of a *static* scene refuse to stay constant, and the saved
strip shows the NUC freeze repeating a frame.

Run from the repository root:

    python3 demos/01_sensor_walkthrough.py
"""

import pathlib

import numpy as np

from thermodepth.enhance import to_8bit_linear
from thermodepth.metrics import flicker
from thermodepth.sensorsim import (SceneSpec, SensorModel, Sprite,
                                   apply_sensor, render_sequence)

out_dir = pathlib.Path("demo_output")
out_dir.mkdir(exist_ok=True)

# a static desk scene: warm disk in front of a cool wall, nothing moves
spec = SceneSpec(
    background_depth=3.0,
    sprites=(
        Sprite(shape="disk", size=16.0, depth=1.2, temperature=42000.0,
               position=(24.0, 30.0)),
        Sprite(shape="rect", size=12.0, depth=0.8, temperature=52000.0,
               position=(40.0, 55.0)),
    ),
    seed=7, n_frames=10, width=80, height=64,
)

clean = render_sequence(spec)

# the camera: a 400-count offset drift (which the AGC re-stretch then
# hides again), shot noise, AGC, and a NUC every 4 frames
camera = SensorModel(agc_percentiles=(1.0, 99.0), drift_amplitude=400.0,
                     drift_period=6, noise_sigma=150.0,
                     nuc_interval=4, nuc_freeze_len=1)
observed = apply_sensor(clean, camera, seed=7)

# per-frame statistics: the clean stream is steady, the observed one is not
print("frame   clean mean   observed mean   nuc")
for k, (c, o) in enumerate(zip(clean.frames, observed.frames)):
    nuc = "frozen" if k > 0 and np.array_equal(
        o.pixels, observed.frames[k - 1].pixels) else ""
    print(f"{k:5d}   {c.pixels.mean():10.1f}   "
          f"{o.pixels.mean():13.1f}   {nuc}")

# flicker of the 8-bit streams: the scene is static, so any change is
# the camera's doing
clean8 = [to_8bit_linear(f) for f in clean.frames]
obs8 = [to_8bit_linear(f) for f in observed.frames]
print(f"\n8-bit flicker, clean stream:    {flicker(clean8):.4f}")
print(f"8-bit flicker, observed stream: {flicker(obs8):.4f}")

# save a strip: top row clean, bottom row observed
from PIL import Image

strip = np.concatenate([
    np.concatenate(clean8, axis=1),
    np.concatenate(obs8, axis=1),
], axis=0)
Image.fromarray(strip).save(out_dir / "sensor_walkthrough.png")
print(f"\nwrote {out_dir / 'sensor_walkthrough.png'}")
