"""
Overfitting a single noisy image
================================

A tiny model trained on one 64x64 image with sigma=25 noise. After a few
hundred AdamW steps it should be clearly better than the noisy input.
Takes about a minute on one core.
"""

import sys

import numpy as np

from xrestormer import ModelConfig, build_model, restore
from xrestormer import degradations as deg
from xrestormer.images import smooth_scene
from xrestormer.metrics import psnr
from xrestormer.tensor import no_grad
from xrestormer.trainer import PairedDataset, Sample, TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300

clean = smooth_scene(64, seed=0)
noisy = deg.degrade_noise(clean, 25.0, seed=0)
print(f"noisy input: {psnr(noisy, clean):.2f} dB")

model = build_model(ModelConfig.tiny(), seed=0)
# the schedule shape of the long run, squeezed into 2000 iterations
cfg = TrainConfig().compressed(2000, patch=64, batch=1, log_every=0)
x = noisy.transpose(2, 0, 1)[None].astype(np.float32)


def report(step, m):
    if step % 50 == 0:
        with no_grad():
            out = restore(m, x).data[0].transpose(1, 2, 0).astype(np.float64)
        print(f"step {step:4d}  restored {psnr(out, clean):.2f} dB")
    return step >= steps


model, trace = train(model, PairedDataset([Sample(clean, noisy)], "denoise"), cfg, callback=report)
print(f"L1 went from {trace[0][2]:.4f} to {trace[-1][2]:.4f}")
