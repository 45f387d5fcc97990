"""Transposed (channel) self-attention, overlapping cross-attention, the gated
depthwise feed-forward network, and the two pre-norm residual blocks built
from them.

Every parameter bundle knows how to create itself from a numpy ``Generator``
and how to list its tensors under stable relative names.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .nn import (
    Conv2dParams,
    LayerNormParams,
    conv2d,
    crop2d,
    gelu,
    l2_normalize,
    layer_norm,
    overlap_window_size,
    overlapping_window_partition,
    pad2d,
    window_partition,
    window_reverse,
)
from .tensor import Tensor, matmul, softmax, split


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) redrawn outside two standard deviations."""
    dtype = np.dtype(dtype)
    out = rng.standard_normal(shape, dtype=dtype)  # drawn in the target precision: 26M draws add up
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()), dtype=dtype)
        bad = np.abs(out) > 2.0
    out *= dtype.type(std)
    return out


def fan_in_uniform(rng: np.random.Generator, shape, dtype=np.float32) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for conv weights [out, in/groups, kh, kw]."""
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


def ffn_hidden(channels: int, expansion: float) -> int:
    hidden = int(np.floor(channels * expansion))
    if hidden < 1:
        raise ConfigError(f"feed-forward hidden width {hidden} for {channels} channels")
    return hidden


def make_layer_norm(C: int, dtype=np.float32) -> LayerNormParams:
    return LayerNormParams(_param(np.ones(C, dtype)), _param(np.zeros(C, dtype)))


# -- MDTA ----------------------------------------------------------------------
@dataclass
class MdtaParams:
    qkv: Tensor  # [3C, C, 1, 1]
    qkv_dw: Tensor  # [3C, 1, 3, 3]
    proj: Tensor  # [C, C, 1, 1]
    temperature: Tensor  # [heads]
    heads: int
    padding_mode: str = "reflect"

    @classmethod
    def create(cls, C: int, heads: int, rng: np.random.Generator, dtype=np.float32, padding_mode="reflect"):
        if C % heads:
            raise ConfigError(f"{C} channels do not split into {heads} heads")
        return cls(
            qkv=_param(trunc_normal(rng, (3 * C, C, 1, 1), dtype=dtype)),
            qkv_dw=_param(fan_in_uniform(rng, (3 * C, 1, 3, 3), dtype=dtype)),
            proj=_param(trunc_normal(rng, (C, C, 1, 1), dtype=dtype)),
            temperature=_param(np.ones(heads, dtype)),
            heads=heads,
            padding_mode=padding_mode,
        )

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield from (("qkv", self.qkv), ("qkv_dw", self.qkv_dw), ("proj", self.proj), ("temperature", self.temperature))

    @property
    def output_projections(self) -> list[Tensor]:
        return [self.proj]


def mdta_forward(x: Tensor, p: MdtaParams, return_attention: bool = False):
    """Channel-token attention: one (C/h) x (C/h) attention matrix per head.

    Q and K rows (one per channel, H*W long) are L2-normalized before the
    temperature-scaled dot product.
    """
    B, C, H, W = x.shape
    h = p.heads
    if C % h:
        raise ConfigError(f"{C} channels do not split into {h} heads")
    qkv = conv2d(x, Conv2dParams(p.qkv))
    qkv = conv2d(qkv, Conv2dParams(p.qkv_dw, padding=1, groups=3 * C, padding_mode=p.padding_mode))
    q, k, v = split(qkv, 3, axis=1)
    q = l2_normalize(q.reshape(B, h, C // h, H * W), axis=-1)
    k = l2_normalize(k.reshape(B, h, C // h, H * W), axis=-1)
    v = v.reshape(B, h, C // h, H * W)
    logits = matmul(q, k.transpose(0, 1, 3, 2)) * p.temperature.reshape(1, h, 1, 1)
    attn = softmax(logits, axis=-1)
    out = conv2d(matmul(attn, v).reshape(B, C, H, W), Conv2dParams(p.proj))
    return (out, attn) if return_attention else out


# -- OCA -----------------------------------------------------------------------
def relative_position_index(M: int, Mo: int) -> np.ndarray:
    """[M*M, Mo*Mo] indices into a (M+Mo-1)^2 bias table.

    Query (y, x) sits in the M x M window; key (Y, X) in the Mo x Mo window
    whose origin is shifted by -(Mo-M)/2. The row/column offsets are shifted
    to start at 0 and flattened row-major.
    """
    pad = (Mo - M) // 2
    span = M + Mo - 1
    qy, qx = np.divmod(np.arange(M * M), M)
    ky, kx = np.divmod(np.arange(Mo * Mo), Mo)
    dy = (ky[None, :] - pad) - qy[:, None] + pad + M - 1
    dx = (kx[None, :] - pad) - qx[:, None] + pad + M - 1
    return dy * span + dx


@dataclass
class OcaParams:
    qkv: Tensor  # [3*inner, C, 1, 1]
    proj: Tensor  # [C, inner, 1, 1]
    rpb_table: Tensor  # [(M+Mo-1)^2, heads]
    heads: int
    window: int = 8
    overlap: float = 0.5

    def __post_init__(self):
        self.window_ext = overlap_window_size(self.window, self.overlap)
        inner = self.qkv.shape[0] // 3
        if inner % self.heads:
            raise ConfigError(f"attention width {inner} does not split into {self.heads} heads")
        span = self.window + self.window_ext - 1
        if self.rpb_table.shape != (span * span, self.heads):
            raise ShapeError(f"bias table {self.rpb_table.shape} != {(span * span, self.heads)}")
        self._rpi = relative_position_index(self.window, self.window_ext).reshape(-1)

    @classmethod
    def create(cls, C: int, heads: int, rng: np.random.Generator, window=8, overlap=0.5,
               head_dim: int | None = None, dtype=np.float32):
        inner = C if head_dim is None else head_dim * heads
        if inner % heads:
            raise ConfigError(f"attention width {inner} does not split into {heads} heads")
        Mo = overlap_window_size(window, overlap)
        span = window + Mo - 1
        return cls(
            qkv=_param(trunc_normal(rng, (3 * inner, C, 1, 1), dtype=dtype)),
            proj=_param(trunc_normal(rng, (C, inner, 1, 1), dtype=dtype)),
            rpb_table=_param(trunc_normal(rng, (span * span, heads), dtype=dtype)),
            heads=heads,
            window=window,
            overlap=overlap,
        )

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield from (("qkv", self.qkv), ("proj", self.proj), ("rpb_table", self.rpb_table))

    @property
    def output_projections(self) -> list[Tensor]:
        return [self.proj]


def oca_forward(x: Tensor, p: OcaParams, return_attention: bool = False):
    """Queries from non-overlapping M x M windows, keys/values from the
    co-centered Mo x Mo windows; per head an M^2 x Mo^2 attention matrix."""
    B, C, H, W = x.shape
    M, Mo, h = p.window, p.window_ext, p.heads
    if H % M or W % M:
        raise ContractError(f"extents {(H, W)} not divisible by window {M}; pad before calling")
    inner = p.qkv.shape[0] // 3
    d = inner // h
    qkv = conv2d(x, Conv2dParams(p.qkv))
    q, kv = qkv[:, :inner], qkv[:, inner:]
    qw = window_partition(q, M)
    kvw = overlapping_window_partition(kv, M, p.overlap)
    n = qw.shape[0]
    kw, vw = split(kvw, 2, axis=2)
    qw = qw.reshape(n, M * M, h, d).transpose(0, 2, 1, 3) * (d ** -0.5)
    kw = kw.reshape(n, Mo * Mo, h, d).transpose(0, 2, 3, 1)
    vw = vw.reshape(n, Mo * Mo, h, d).transpose(0, 2, 1, 3)
    bias = p.rpb_table[p._rpi].reshape(M * M, Mo * Mo, h).transpose(2, 0, 1).reshape(1, h, M * M, Mo * Mo)
    attn = softmax(matmul(qw, kw) + bias, axis=-1)
    out = matmul(attn, vw).transpose(0, 2, 1, 3).reshape(n, M * M, inner)
    out = conv2d(window_reverse(out, M, H, W), Conv2dParams(p.proj))
    return (out, attn) if return_attention else out


# -- GDFN ----------------------------------------------------------------------
@dataclass
class GdfnParams:
    project_in: Tensor  # [2*hidden, C, 1, 1]; gate branch first
    dw: Tensor  # [2*hidden, 1, 3, 3]; two depthwise convs stacked
    project_out: Tensor  # [C, hidden, 1, 1]
    padding_mode: str = "reflect"

    @classmethod
    def create(cls, C: int, expansion: float, rng: np.random.Generator, dtype=np.float32, padding_mode="reflect"):
        hidden = ffn_hidden(C, expansion)
        return cls(
            project_in=_param(trunc_normal(rng, (2 * hidden, C, 1, 1), dtype=dtype)),
            dw=_param(fan_in_uniform(rng, (2 * hidden, 1, 3, 3), dtype=dtype)),
            project_out=_param(trunc_normal(rng, (C, hidden, 1, 1), dtype=dtype)),
            padding_mode=padding_mode,
        )

    @property
    def hidden(self) -> int:
        return self.project_out.shape[1]

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield from (("project_in", self.project_in), ("dw", self.dw), ("project_out", self.project_out))

    @property
    def output_projections(self) -> list[Tensor]:
        return [self.project_out]


def gdfn_forward(x: Tensor, p: GdfnParams) -> Tensor:
    h2 = p.dw.shape[0]
    y = conv2d(x, Conv2dParams(p.project_in))
    y = conv2d(y, Conv2dParams(p.dw, padding=1, groups=h2, padding_mode=p.padding_mode))
    gate, value = split(y, 2, axis=1)
    return conv2d(gelu(gate) * value, Conv2dParams(p.project_out))


# -- blocks --------------------------------------------------------------------
@dataclass
class TsabParams:
    norm1: LayerNormParams
    attn: MdtaParams
    norm2: LayerNormParams
    ffn: GdfnParams

    @classmethod
    def create(cls, C, heads, expansion, rng, dtype=np.float32):
        return cls(make_layer_norm(C, dtype), MdtaParams.create(C, heads, rng, dtype),
                   make_layer_norm(C, dtype), GdfnParams.create(C, expansion, rng, dtype))

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield "norm1.gamma", self.norm1.gamma
        yield "norm1.beta", self.norm1.beta
        for k, t in self.attn.named():
            yield f"attn.{k}", t
        yield "norm2.gamma", self.norm2.gamma
        yield "norm2.beta", self.norm2.beta
        for k, t in self.ffn.named():
            yield f"ffn.{k}", t

    @property
    def output_projections(self) -> list[Tensor]:
        return self.attn.output_projections + self.ffn.output_projections


@dataclass
class SsabParams(TsabParams):
    attn: OcaParams

    @classmethod
    def create(cls, C, heads, expansion, rng, dtype=np.float32, window=8, overlap=0.5, head_dim=None):
        return cls(make_layer_norm(C, dtype), OcaParams.create(C, heads, rng, window, overlap, head_dim, dtype),
                   make_layer_norm(C, dtype), GdfnParams.create(C, expansion, rng, dtype))


def tsab_forward(x: Tensor, p: TsabParams) -> Tensor:
    t = x + mdta_forward(layer_norm(x, p.norm1), p.attn)
    return t + gdfn_forward(layer_norm(t, p.norm2), p.ffn)


def _windowed(x: Tensor, p: OcaParams) -> Tensor:
    H, W = x.shape[-2:]
    M = p.window
    ph, pw = (-H) % M, (-W) % M
    if ph == 0 and pw == 0:
        return oca_forward(x, p)
    y = oca_forward(pad2d(x, (0, ph, 0, pw), mode="replicate"), p)
    return crop2d(y, H, W)


def ssab_forward(x: Tensor, p: SsabParams) -> Tensor:
    """Same residual algebra as :func:`tsab_forward` with OCA as the mixer.

    Extents that are not window multiples are replicate-padded around the
    attention call and cropped back.
    """
    s = x + _windowed(layer_norm(x, p.norm1), p.attn)
    return s + gdfn_forward(layer_norm(s, p.norm2), p.ffn)


def block_forward(x: Tensor, p: TsabParams) -> Tensor:
    return ssab_forward(x, p) if isinstance(p, SsabParams) else tsab_forward(x, p)
