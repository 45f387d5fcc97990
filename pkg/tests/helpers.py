"""Shared test utilities: central finite differences against the tape."""
import math

import numpy as np

from xrestormer import degradations as deg
from xrestormer.model import ModelConfig, build_model, forward
from xrestormer.tensor import Tensor, backward, no_grad, tsum

EPS = 1e-5
SEEDS = (0, 1, 2)


def rel_err(analytic, numeric):
    """max |a - n| / max |n|  (norm-relative, robust to entries near zero)."""
    scale = max(np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def grad_check(fn, arrays, seed=0, max_entries=40, eps=EPS):
    """Compare the analytic gradient of sum(fn(*tensors) * R) with central differences.

    ``arrays`` are float64 numpy inputs; for each, up to ``max_entries``
    randomly chosen coordinates are perturbed. Returns the worst relative error.
    """
    # separate stream from the one tests use for inputs (a projection parallel to
    # the input would zero out e.g. the l2-normalize gradient)
    rng = np.random.default_rng([seed, 7919])
    leaves = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    R = rng.standard_normal(out.shape)
    backward(tsum(out * Tensor(R)))

    def objective():
        with_vals = [Tensor(l.data) for l in leaves]
        return float((fn(*with_vals).data * R).sum())

    worst = 0.0
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = objective()
            flat[i] = old - eps
            fm = objective()
            flat[i] = old
            numeric[j] = (fp - fm) / (2 * eps)
        analytic = leaf.grad.data.reshape(-1)[idx]
        worst = max(worst, rel_err(analytic, numeric))
    return worst


MODEL_GRAD_PARAMS = ("patch_embed.weight", "encoder1.0.attn.temperature", "encoder1.1.attn.rpb_table",
                     "latent.1.attn.qkv", "decoder1.0.ffn.dw", "refinement.1.norm1.gamma", "up2.weight",
                     "output.weight")


def tiny_model_grad_check(seed, names=MODEL_GRAD_PARAMS, per_tensor=6, eps=EPS):
    """Finite differences through the whole tiny f64 model, on a sample of
    parameters from every stage plus the input image."""
    m = build_model(ModelConfig.tiny(), seed=seed, dtype=np.float64)
    for b in m.blocks():
        for t in b.output_projections:
            t.data *= 10  # make every residual branch contribute measurably
    rng = np.random.default_rng([seed, 99])
    x = Tensor(rng.uniform(0, 1, (1, 3, 12, 10)), requires_grad=True)
    R = rng.standard_normal((1, 3, 12, 10))

    def objective():
        with no_grad():
            return float((forward(m, x.data).data * R).sum())

    m.zero_grad()
    backward(tsum(forward(m, x) * Tensor(R)))
    worst = 0.0
    for t in [m.params[n] for n in names] + [x]:
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            fp = objective()
            flat[i] = old - eps
            fm = objective()
            flat[i] = old
            num[j] = (fp - fm) / (2 * eps)
        worst = max(worst, rel_err(t.grad.data.reshape(-1)[idx], num))
    return worst


def matlab_style_resize(img, s):
    """Loop oracle for antialiased bicubic shrinking by 1/s, written from the
    1-based formulation of the classic image-resize routine."""
    scale = 1.0 / s
    width = 4.0 / scale  # kernel width stretched for antialiasing

    def axis_weights(n_in):
        n_out = n_in // s
        rows = []
        for x in range(1, n_out + 1):
            u = x / scale + 0.5 * (1 - 1 / scale)
            left = math.floor(u - width / 2)
            taps = [left + j for j in range(int(math.ceil(width)) + 2)]
            w = [scale * float(deg.cubic(scale * (u - t))) for t in taps]
            total = sum(w)
            row = [0.0] * n_in
            for t, wt in zip(taps, w):
                i = t - 1  # to 0-based, then mirror (symmetric boundary)
                while i < 0 or i >= n_in:
                    i = -i - 1 if i < 0 else 2 * n_in - 1 - i
                row[i] += wt / total
            rows.append(row)
        return rows

    H, W, C = img.shape
    Wy, Wx = axis_weights(H), axis_weights(W)
    tmp = np.zeros((len(Wy), W, C))
    for i, row in enumerate(Wy):
        for h in range(H):
            if row[h]:
                tmp[i] += row[h] * img[h]
    out = np.zeros((len(Wy), len(Wx), C))
    for j, row in enumerate(Wx):
        for w in range(W):
            if row[w]:
                out[:, j] += row[w] * tmp[:, w]
    return out
