"""Differentiable building blocks: convolution, normalization, resampling,
window partitioning.

Convolutions follow the cross-correlation convention (no kernel flip):
``out[b, o, y, x] = sum_{c, i, j} w[o, c, i, j] * xp[b, g*Cg + c, y*s + i, x*s + j]``
where ``xp`` is the padded input and ``g`` the group of output channel ``o``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, _make, _slice

PAD_MODES = ("zeros", "reflect", "replicate")


# -- padding ---------------------------------------------------------------
def _pad_index(n: int, before: int, after: int, mode: str) -> np.ndarray:
    pos = np.arange(-before, n + after)
    if mode == "replicate" or n == 1:
        return np.clip(pos, 0, n - 1)
    if mode == "reflect":
        period = 2 * (n - 1)
        pos = np.mod(pos, period)
        return np.where(pos >= n, period - pos, pos)
    raise ConfigError(f"unknown padding mode {mode!r}")


def _pad_axis(x: np.ndarray, before: int, after: int, axis: int, mode: str) -> np.ndarray:
    if before == 0 and after == 0:
        return x
    if mode == "zeros":
        widths = [(0, 0)] * x.ndim
        widths[axis] = (before, after)
        return np.pad(x, widths)
    idx = _pad_index(x.shape[axis], before, after, mode)
    return np.take(x, idx, axis=axis)


def _fold_axis(g: np.ndarray, n: int, before: int, after: int, axis: int, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad_axis`: route padded-position gradients to their source."""
    if before == 0 and after == 0:
        return g
    g = np.moveaxis(g, axis, -1)
    out = g[..., before:before + n].copy()
    if mode != "zeros":
        idx = _pad_index(n, before, after, mode)
        for k in list(range(before)) + list(range(before + n, before + n + after)):
            out[..., idx[k]] += g[..., k]
    return np.moveaxis(out, -1, axis)


def _pad_hw(x: np.ndarray, pads: tuple[int, int, int, int], mode: str) -> np.ndarray:
    top, bottom, left, right = pads
    return _pad_axis(_pad_axis(x, top, bottom, -2, mode), left, right, -1, mode)


def _fold_hw(g: np.ndarray, hw: tuple[int, int], pads: tuple[int, int, int, int], mode: str) -> np.ndarray:
    top, bottom, left, right = pads
    g = _fold_axis(g, hw[1], left, right, -1, mode)
    return _fold_axis(g, hw[0], top, bottom, -2, mode)


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: str = "reflect") -> Tensor:
    """Pad the last two axes by (top, bottom, left, right)."""
    if mode not in PAD_MODES:
        raise ConfigError(f"unknown padding mode {mode!r}")
    hw = x.shape[-2:]
    if mode == "reflect" and (max(pads[:2]) >= max(hw[0], 2) or max(pads[2:]) >= max(hw[1], 2)):
        raise ShapeError(f"reflect padding {pads} too large for extents {hw}")
    return _make(_pad_hw(x.data, pads, mode), (x,), lambda g: (_fold_hw(g, hw, pads, mode),), "pad2d")


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    return _slice(x, (Ellipsis, slice(0, h), slice(0, w)))


# -- convolution -----------------------------------------------------------
@dataclass
class Conv2dParams:
    weight: Tensor  # [out_ch, in_ch / groups, kh, kw]
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1
    padding_mode: str = "zeros"

    def __post_init__(self):
        out_ch = self.weight.shape[0]
        if self.groups < 1 or out_ch % self.groups:
            raise ShapeError(f"groups={self.groups} does not divide out_ch={out_ch}")


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    B, C, H, W = x.shape
    O, Cg, kh, kw = p.weight.shape
    if C % p.groups or Cg * p.groups != C:
        raise ShapeError(f"input channels {C} incompatible with weight {p.weight.shape} and groups={p.groups}")
    pad, s = p.padding, p.stride
    if H + 2 * pad < kh or W + 2 * pad < kw:
        raise ShapeError(f"spatial extents {(H, W)} smaller than kernel {(kh, kw)} after padding {pad}")
    pads = (pad, pad, pad, pad)
    if p.groups == C == O and s == 1:
        out = _depthwise(x, p.weight, pads, p.padding_mode)
    elif kh == kw == 1 and s == 1 and pad == 0 and p.groups == 1:
        out = _pointwise(x, p.weight)
    else:
        out = _grouped(x, p.weight, pads, s, p.groups, p.padding_mode)
    if p.bias is not None:
        out = out + p.bias.reshape(1, O, 1, 1)
    return out


def _pointwise(x: Tensor, weight: Tensor) -> Tensor:
    B, C, H, W = x.shape
    O = weight.shape[0]
    xd = x.data.reshape(B, C, H * W)
    wd = weight.data.reshape(O, C)
    out = np.matmul(wd, xd).reshape(B, O, H, W)

    def bw(g):
        g = g.reshape(B, O, H * W)
        gx = np.matmul(wd.T, g).reshape(B, C, H, W) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = np.matmul(g, xd.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        return gx, gw

    return _make(out, (x, weight), bw, "conv1x1")


def _depthwise(x: Tensor, weight: Tensor, pads, mode: str) -> Tensor:
    B, C, H, W = x.shape
    _, _, kh, kw = weight.shape
    xp = _pad_hw(x.data, pads, mode)
    Ho, Wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    wd = weight.data[:, 0]
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wd[None, :, i, j, None, None] * xp[:, :, i:i + Ho, j:j + Wo]

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + Ho, j:j + Wo] += wd[None, :, i, j, None, None] * g
            gx = _fold_hw(gxp, (H, W), pads, mode)
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i:i + Ho, j:j + Wo])
        return gx, gw

    return _make(out, (x, weight), bw, "dwconv")


def _grouped(x: Tensor, weight: Tensor, pads, s: int, G: int, mode: str) -> Tensor:
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    Og = O // G
    xp = _pad_hw(x.data, pads, mode)
    Hp, Wp = xp.shape[2:]
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
    # [B, G, Cg*kh*kw, Ho*Wo]
    cols = win.reshape(B, G, Cg, Ho, Wo, kh, kw).transpose(0, 1, 2, 5, 6, 3, 4).reshape(B, G, Cg * kh * kw, Ho * Wo)
    wd = weight.data.reshape(G, Og, Cg * kh * kw)
    out = np.matmul(wd[None], cols).reshape(B, O, Ho, Wo)

    def bw(g):
        g = g.reshape(B, G, Og, Ho * Wo)
        gx = gw = None
        if weight.requires_grad:
            gw = np.matmul(g, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(wd.transpose(0, 2, 1)[None], g).reshape(B, C, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s] += gcols[:, :, i, j]
            gx = _fold_hw(gxp, (H, W), pads, mode)
        return gx, gw

    return _make(out, (x, weight), bw, "conv2d")


# -- normalization and activations ------------------------------------------
@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError("layer norm epsilon must be positive")
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError(f"gamma {self.gamma.shape} and beta {self.beta.shape} must be equal 1-D")


def layer_norm(x: Tensor, p: LayerNormParams, axis: int | None = None) -> Tensor:
    """Per-position normalization over the channel axis.

    ``axis`` defaults to 1 for [B, C, H, W] inputs and -1 otherwise ([B, HW, C]).
    """
    if axis is None:
        axis = 1 if x.ndim == 4 else -1
    axis %= x.ndim
    C = x.shape[axis]
    if C == 0:
        raise ContractError("layer_norm over zero channels")
    if p.gamma.shape[0] != C:
        raise ShapeError(f"channel extent {C} != parameter length {p.gamma.shape[0]}")
    bshape = [1] * x.ndim
    bshape[axis] = C
    gd, bd = p.gamma.data.reshape(bshape), p.beta.data.reshape(bshape)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * rstd
    out = xhat * gd + bd
    others = tuple(i for i in range(x.ndim) if i != axis)

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = rstd * (gh - gh.mean(axis=axis, keepdims=True) - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        ggamma = (g * xhat).sum(axis=others) if p.gamma.requires_grad else None
        gbeta = g.sum(axis=others) if p.beta.requires_grad else None
        return gx, ggamma, gbeta

    return _make(out, (x, p.gamma, p.beta), bw, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / max(||x||_2, eps) along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = x.data / denom

    def bw(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(norm > eps, (g - out * proj) / denom, g / eps),)

    return _make(out, (x,), bw, "l2_normalize")


_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def bw(g):
        return (g * (cdf + xd * _INV_SQRT2PI * np.exp(-0.5 * xd * xd)),)

    return _make(xd * cdf, (x,), bw, "gelu")


# -- rearrangements ----------------------------------------------------------
def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if H % r or W % r:
        raise ShapeError(f"extents {(H, W)} not divisible by {r}")
    return (
        x.reshape(B, C, H // r, r, W // r, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(B, C * r * r, H // r, W // r)
    )


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if C % (r * r):
        raise ShapeError(f"channels {C} not divisible by {r * r}")
    c = C // (r * r)
    return x.reshape(B, c, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, c, H * r, W * r)


def window_partition(x: Tensor, M: int) -> Tensor:
    """[B, C, H, W] -> [B * (H/M) * (W/M), M*M, C], windows in raster order."""
    B, C, H, W = x.shape
    if H % M or W % M:
        raise ShapeError(f"extents {(H, W)} not divisible by window {M}")
    nh, nw = H // M, W // M
    return x.reshape(B, C, nh, M, nw, M).transpose(0, 2, 4, 3, 5, 1).reshape(B * nh * nw, M * M, C)


def window_reverse(windows: Tensor, M: int, H: int, W: int) -> Tensor:
    nh, nw = H // M, W // M
    n, _, C = windows.shape
    B = n // (nh * nw)
    return windows.reshape(B, nh, nw, M, M, C).transpose(0, 5, 1, 3, 2, 4).reshape(B, C, H, W)


def overlap_window_size(M: int, gamma: float) -> int:
    Mo = (1.0 + gamma) * M
    if abs(Mo - round(Mo)) > 1e-9 or (round(Mo) - M) % 2:
        raise ConfigError(f"overlapping window (1+{gamma})*{M} must be an integer with even excess over {M}")
    return int(round(Mo))


def overlapping_window_partition(x: Tensor, M: int, gamma: float) -> Tensor:
    """[B, C, H, W] -> [B * (H/M) * (W/M), Mo*Mo, C] with Mo = (1+gamma)*M.

    Windows of extent Mo are taken at stride M from the input zero-padded by
    (Mo - M)/2 on every side, so window k is centered on non-overlapping window k.
    """
    B, C, H, W = x.shape
    Mo = overlap_window_size(M, gamma)
    if H % M or W % M:
        raise ShapeError(f"extents {(H, W)} not divisible by window {M}")
    pad = (Mo - M) // 2
    nh, nw = H // M, W // M
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (Mo, Mo), axis=(2, 3))[:, :, ::M, ::M][:, :, :nh, :nw]
    out = win.transpose(0, 2, 3, 4, 5, 1).reshape(B * nh * nw, Mo * Mo, C)
    K = -(-Mo // M)

    def bw(g):
        g = g.reshape(B, nh, nw, Mo, Mo, C).transpose(0, 5, 1, 3, 2, 4)  # B C nh a nw b
        gp = np.zeros((B, C, (nh + K) * M, (nw + K) * M), dtype=g.dtype)
        for A in range(K):
            ra = min(Mo, (A + 1) * M) - A * M
            for Bk in range(K):
                rb = min(Mo, (Bk + 1) * M) - Bk * M
                view = gp[:, :, A * M:(A + nh) * M, Bk * M:(Bk + nw) * M].reshape(B, C, nh, M, nw, M)
                view[:, :, :, :ra, :, :rb] += g[:, :, :, A * M:A * M + ra, :, Bk * M:Bk * M + rb]
        return (gp[:, :, pad:pad + H, pad:pad + W],)

    return _make(out, (x,), bw, "overlap_partition")


# -- resampling ---------------------------------------------------------------
def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row i holds the interpolation weights of output sample i (align_corners=False)."""
    if n_out < 1 or n_in < 1:
        raise ContractError(f"bilinear resize to extent {n_out} from {n_in}")
    R = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    rows = np.arange(n_out)
    np.add.at(R, (rows, i0), 1.0 - lam)
    np.add.at(R, (rows, i1), lam)
    return R


def bilinear_resize(x: Tensor, scale: float | None = None, size: tuple[int, int] | None = None) -> Tensor:
    """Bilinear resampling of the last two axes, half-pixel centers (align_corners=False)."""
    H, W = x.shape[-2:]
    if size is None:
        if scale is None or scale <= 0:
            raise ContractError("bilinear_resize needs a positive scale or a target size")
        size = (int(np.floor(H * scale + 1e-9)), int(np.floor(W * scale + 1e-9)))
    Ho, Wo = size
    if Ho < 1 or Wo < 1:
        raise ContractError(f"bilinear_resize target extent {size} is empty")
    Ry = bilinear_matrix(H, Ho, x.dtype)
    Rx = bilinear_matrix(W, Wo, x.dtype)
    out = np.matmul(np.matmul(Ry, x.data), Rx.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(Ry.T, g), Rx),), "bilinear")
