"""
Degradation gallery
===================

Applies each of the five synthetic degradations to one clean image, writes
them next to each other in a PNG strip, and reports how much each one costs
in PSNR.
"""

import sys
from pathlib import Path

import numpy as np

from xrestormer import degradations as deg
from xrestormer.images import smooth_scene, write_png
from xrestormer.metrics import metric_config_for, psnr
from xrestormer.nn import bilinear_matrix

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
clean = smooth_scene(96, seed=1)

specs = {
    "denoise": deg.Noise(sigma=50, seed=0),
    "deblur": deg.random_trajectory(np.random.default_rng(2)),
    "derain": deg.Rain(density=0.004, length=15, angle=70.0, intensity=0.6, seed=3),
    "dehaze": deg.Haze(beta=1.2, airlight=0.9, seed=4),
    "sr4": deg.SR(scale=4),
}

strip = [clean]
for task, spec in specs.items():
    img = deg.apply(clean, spec)
    if task == "sr4":
        # show the low-resolution input at full size (bilinear, as the model sees it)
        Ry, Rx = bilinear_matrix(img.shape[0], 96), bilinear_matrix(img.shape[1], 96)
        img = np.einsum("ih,hwc,jw->ijc", Ry, img, Rx)
    print(f"{task:8s} {deg.spec_to_text(spec)[:60]:60s} PSNR {psnr(img, clean, metric_config_for(task)):6.2f} dB")
    strip.append(np.clip(img, 0, 1))

write_png(out_dir / "gallery.png", np.concatenate(strip, axis=1))
print("wrote", out_dir / "gallery.png")
