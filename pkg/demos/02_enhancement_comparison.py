"""
Four ways to turn raw thermal counts into a stable 8-bit stream
===============================================================

Compares per-frame min-max stretching (what most viewers do), Gaussian
smoothing, CLAHE, and the learned refinement net (here untrained, so
it mostly shows the fixed normalization) on an AGC-flickering scene.
The number to watch is flicker: mean absolute 8-bit change between
consecutive frames of a static scene.

Run from the repository root:

    python3 demos/02_enhancement_comparison.py
"""

import pathlib

import numpy as np
from PIL import Image

from thermodepth.enhance import (clahe, colorize, gaussian_smooth, refine,
                                 refined_to_8bit, to_8bit_linear)
from thermodepth.frames import raw_to_normalized
from thermodepth.metrics import flicker
from thermodepth.model import build_model
from thermodepth.sensorsim import (SceneSpec, SensorModel, Sprite,
                                   apply_sensor, render_sequence)

out_dir = pathlib.Path("demo_output")
out_dir.mkdir(exist_ok=True)

# static scene, hot sprite entering: the classic AGC failure case
spec = SceneSpec(
    background_depth=3.5,
    sprites=(
        Sprite(shape="rect", size=14.0, depth=1.0, temperature=40000.0,
               position=(22.0, 34.0)),
        Sprite(shape="disk", size=10.0, depth=0.7, temperature=55000.0,
               position=(40.0, -15.0), velocity=(0.0, 6.0)),
    ),
    seed=11, n_frames=8, width=80, height=64,
)
sample = apply_sensor(render_sequence(spec),
                      SensorModel(noise_sigma=120.0), seed=11)

model = build_model(seed=0)  # untrained refinement net

methods = {
    "raw8": lambda f: to_8bit_linear(f),
    "gauss": lambda f: gaussian_smooth(to_8bit_linear(f), sigma=1.5),
    "clahe": lambda f: clahe(to_8bit_linear(f)),
    "refine": lambda f: refined_to_8bit(
        refine(raw_to_normalized(f), model.refine)),
}

print("method   flicker")
rows = []
for name, fn in methods.items():
    frames8 = [fn(f) for f in sample.frames]
    print(f"{name:7s}  {flicker(frames8):.4f}")
    rows.append(np.concatenate(frames8, axis=1))

Image.fromarray(np.concatenate(rows, axis=0)).save(
    out_dir / "enhancement_gray.png")

# the color-mapped view the operator would actually look at
colored = [colorize(refine(raw_to_normalized(f), model.refine))
           for f in sample.frames]
Image.fromarray(np.concatenate(colored, axis=1)).save(
    out_dir / "enhancement_color.png")
print(f"\nwrote {out_dir / 'enhancement_gray.png'} and "
      f"{out_dir / 'enhancement_color.png'}")
