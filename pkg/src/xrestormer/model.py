"""U-shape encoder/decoder assembled from TSAB/SSAB pairs.

Layout for L levels with widths C_1..C_L::

    3x3 conv (3 -> C_1)
    encoder level i < L: blocks at C_i, then downsample (3x3 conv C_i -> C_i/2, pixel-unshuffle 2)
    level L: bottleneck blocks at C_L
    decoder level i = L-1..1: upsample (3x3 conv C_{i+1} -> 2 C_{i+1}, pixel-shuffle 2),
        concat encoder skip, 1x1 reduction back to C_i (levels >= 2 only), blocks
    refinement blocks at 2 C_1, 3x3 conv (2 C_1 -> 3), add the network input

Decoder level 1 and the refinement stage run at 2 C_1 with the level-1 head count.
"""
from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import config as cfgtext
from .attention import (
    SsabParams,
    TsabParams,
    block_forward,
    fan_in_uniform,
    ffn_hidden,
)
from .errors import ConfigError, ContractError, NumericError
from .nn import Conv2dParams, bilinear_resize, conv2d, crop2d, overlap_window_size, pad2d, pixel_shuffle, pixel_unshuffle
from .tensor import Tensor, concat, read_tensor, write_tensor

TASK_MODES = ("denoise", "deblur", "derain", "dehaze", "all-in-one", "sr2", "sr3", "sr4")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the published configuration.

    ``blocks_per_level`` and ``refinement_pairs`` count TSAB+SSAB pairs.
    With ``ssab_enabled=False`` the network is built from TSABs only, using
    ``tsab_blocks_per_level`` / ``tsab_refinement_blocks`` when given and
    otherwise two TSABs per pair. ``oca_head_dim=None`` gives OCA the full
    block width (C / heads channels per head).
    """

    blocks_per_level: tuple[int, ...] = (2, 4, 4, 4)
    refinement_pairs: int = 4
    heads: tuple[int, ...] = (1, 2, 4, 8)
    channels: tuple[int, ...] = (48, 96, 192, 384)
    window: int = 8
    overlap: float = 0.5
    ffn_expansion: float = 2.66
    oca_head_dim: int | None = 16
    ssab_enabled: bool = True
    tsab_blocks_per_level: tuple[int, ...] | None = (4, 6, 6, 8)
    tsab_refinement_blocks: int | None = 4
    task_mode: str = "denoise"

    def __post_init__(self):
        self.validate()

    @classmethod
    def tiny(cls, **overrides) -> ModelConfig:
        base = dict(blocks_per_level=(1, 1, 1, 1), refinement_pairs=1, channels=(8, 16, 32, 64),
                    oca_head_dim=None, tsab_blocks_per_level=None, tsab_refinement_blocks=None)
        base.update(overrides)
        return cls(**base)

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def sr_scale(self) -> int | None:
        return int(self.task_mode[2:]) if self.task_mode.startswith("sr") else None

    @property
    def size_multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def validate(self) -> None:
        L = len(self.channels)
        if L < 2:
            raise ConfigError("need at least two levels")
        if not (len(self.blocks_per_level) == len(self.heads) == L):
            raise ConfigError(f"blocks_per_level {self.blocks_per_level}, heads {self.heads} "
                              f"and channels {self.channels} must all have {L} entries")
        for i in range(L - 1):
            if self.channels[i + 1] != 2 * self.channels[i]:
                raise ConfigError(f"channels must double per level, got {self.channels}")
        if self.channels[0] % 2:
            raise ConfigError("level-1 width must be even")
        for C, h in zip(self.channels, self.heads):
            if C % h:
                raise ConfigError(f"{C} channels do not split into {h} heads")
        if 2 * self.channels[0] % self.heads[0]:
            raise ConfigError("refinement width does not split into level-1 heads")
        if min(self.blocks_per_level) < 0 or self.refinement_pairs < 0:
            raise ConfigError("block counts must be non-negative")
        if self.tsab_blocks_per_level is not None and len(self.tsab_blocks_per_level) != L:
            raise ConfigError("tsab_blocks_per_level must have one entry per level")
        if self.window < 1:
            raise ConfigError("window must be positive")
        overlap_window_size(self.window, self.overlap)
        ffn_hidden(self.channels[0], self.ffn_expansion)
        if self.task_mode not in TASK_MODES:
            raise ConfigError(f"task_mode {self.task_mode!r} not in {TASK_MODES}")

    def block_kinds(self, level: int, refinement: bool = False) -> list[str]:
        """Ordered block kinds ('T' or 'S') at an encoder/decoder level (0-based)."""
        if self.ssab_enabled:
            n = self.refinement_pairs if refinement else self.blocks_per_level[level]
            return ["T", "S"] * n
        if refinement:
            n = self.tsab_refinement_blocks
            return ["T"] * (2 * self.refinement_pairs if n is None else n)
        if self.tsab_blocks_per_level is None:
            return ["T"] * (2 * self.blocks_per_level[level])
        return ["T"] * self.tsab_blocks_per_level[level]

    def to_section(self) -> dict[str, str]:
        return cfgtext.dataclass_to_section(self)

    @classmethod
    def from_section(cls, section: dict[str, str]) -> ModelConfig:
        return cfgtext.dataclass_from_section(cls, section, "[model]")


def _create_block(kind: str, C: int, heads: int, cfg: ModelConfig, rng, dtype) -> TsabParams:
    if kind == "S":
        head_dim = cfg.oca_head_dim
        return SsabParams.create(C, heads, cfg.ffn_expansion, rng, dtype, cfg.window, cfg.overlap, head_dim)
    return TsabParams.create(C, heads, cfg.ffn_expansion, rng, dtype)


@dataclass
class _Stage:
    name: str
    blocks: list[TsabParams]


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Tensor]
    step: int = 0
    stages: dict[str, _Stage] = field(default_factory=dict, repr=False)
    convs: dict[str, Tensor] = field(default_factory=dict, repr=False)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def blocks(self) -> Iterator[TsabParams]:
        for stage in self.stages.values():
            yield from stage.blocks


class _ZeroInit:
    """Stands in for a Generator when only the structure is wanted: every draw is zeros."""

    def standard_normal(self, size, dtype=np.float64):
        return np.zeros(size, dtype=dtype)

    def uniform(self, low=0.0, high=1.0, size=None):
        return np.zeros(size)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32, init: bool = True) -> ModelState:
    """Deterministically initialize every parameter from ``seed``.

    ``init=False`` skips the random draws (all weights zero, LayerNorm gains one);
    enough for enumerating parameters and much faster at full size.
    """
    cfg.validate()
    rng = np.random.default_rng(seed) if init else _ZeroInit()
    L, C, H = cfg.levels, cfg.channels, cfg.heads
    state = ModelState(cfg, {})

    def conv(name, shape):
        t = Tensor(fan_in_uniform(rng, shape, dtype), requires_grad=True)
        state.convs[name] = t
        state.params[f"{name}.weight"] = t

    def stage(name, kinds, width, heads):
        blocks = [_create_block(k, width, heads, cfg, rng, dtype) for k in kinds]
        state.stages[name] = _Stage(name, blocks)
        for j, b in enumerate(blocks):
            for key, t in b.named():
                state.params[f"{name}.{j}.{key}"] = t

    conv("patch_embed", (C[0], 3, 3, 3))
    for i in range(L - 1):
        stage(f"encoder{i + 1}", cfg.block_kinds(i), C[i], H[i])
        conv(f"down{i + 1}", (C[i] // 2, C[i], 3, 3))
    stage("latent", cfg.block_kinds(L - 1), C[L - 1], H[L - 1])
    for i in reversed(range(L - 1)):
        conv(f"up{i + 2}", (2 * C[i + 1], C[i + 1], 3, 3))
        if i > 0:
            conv(f"reduce{i + 1}", (C[i], 2 * C[i], 1, 1))
            stage(f"decoder{i + 1}", cfg.block_kinds(i), C[i], H[i])
        else:
            stage("decoder1", cfg.block_kinds(0), 2 * C[0], H[0])
    stage("refinement", cfg.block_kinds(0, refinement=True), 2 * C[0], H[0])
    conv("output", (3, 2 * C[0], 3, 3))
    return state


# -- closed-form parameter count ---------------------------------------------
def _tsab_count(C: int, h: int, expansion: float) -> int:
    hidden = ffn_hidden(C, expansion)
    mdta = 3 * C * C + 3 * C * 9 + C * C + h
    gdfn = 2 * hidden * C + 2 * hidden * 9 + hidden * C
    return mdta + gdfn + 4 * C


def _ssab_count(C: int, h: int, cfg: ModelConfig) -> int:
    hidden = ffn_hidden(C, cfg.ffn_expansion)
    inner = C if cfg.oca_head_dim is None else cfg.oca_head_dim * h
    span = cfg.window + overlap_window_size(cfg.window, cfg.overlap) - 1
    oca = 3 * inner * C + inner * C + span * span * h
    gdfn = 2 * hidden * C + 2 * hidden * 9 + hidden * C
    return oca + gdfn + 4 * C


def count_parameters(cfg: ModelConfig) -> int:
    """Parameter count computed from the configuration alone."""
    cfg.validate()
    L, C, H = cfg.levels, cfg.channels, cfg.heads

    def stage(kinds, width, heads):
        return sum(_ssab_count(width, heads, cfg) if k == "S" else _tsab_count(width, heads, cfg.ffn_expansion)
                   for k in kinds)

    total = 3 * C[0] * 9 + 3 * 2 * C[0] * 9
    for i in range(L - 1):
        total += stage(cfg.block_kinds(i), C[i], H[i])  # encoder
        total += (C[i] // 2) * C[i] * 9  # down
        total += 2 * C[i + 1] * C[i + 1] * 9  # up
        if i > 0:
            total += C[i] * 2 * C[i]  # reduce
            total += stage(cfg.block_kinds(i), C[i], H[i])
        else:
            total += stage(cfg.block_kinds(0), 2 * C[0], H[0])
    total += stage(cfg.block_kinds(L - 1), C[L - 1], H[L - 1])
    total += stage(cfg.block_kinds(0, refinement=True), 2 * C[0], H[0])
    return total


# -- forward ------------------------------------------------------------------
def _run_stage(x: Tensor, stage: _Stage) -> Tensor:
    for b in stage.blocks:
        x = block_forward(x, b)
    return x


def _conv3(x: Tensor, w: Tensor) -> Tensor:
    return conv2d(x, Conv2dParams(w, padding=1))


def forward(m: ModelState, x) -> Tensor:
    """Restore a [B, 3, H, W] image batch; output has the input's extents."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=next(iter(m.params.values())).dtype))
    if x.ndim != 4 or x.shape[1] != 3:
        raise ContractError(f"expected [B, 3, H, W] input, got {x.shape}")
    B, _, H, W = x.shape
    if H < 8 or W < 8:
        raise ContractError(f"input extents {(H, W)} below the 8 x 8 minimum")
    if not np.isfinite(x.data).all():
        raise NumericError("non-finite values in model input")
    cfg = m.config
    L = cfg.levels
    mult = cfg.size_multiple
    ph, pw = (-H) % mult, (-W) % mult
    inp = pad2d(x, (0, ph, 0, pw), mode="reflect") if (ph or pw) else x

    feat = _conv3(inp, m.convs["patch_embed"])
    skips = []
    for i in range(L - 1):
        feat = _run_stage(feat, m.stages[f"encoder{i + 1}"])
        skips.append(feat)
        feat = pixel_unshuffle(_conv3(feat, m.convs[f"down{i + 1}"]), 2)
    feat = _run_stage(feat, m.stages["latent"])
    for i in reversed(range(L - 1)):
        feat = pixel_shuffle(_conv3(feat, m.convs[f"up{i + 2}"]), 2)
        feat = concat([feat, skips[i]], axis=1)
        if i > 0:
            feat = conv2d(feat, Conv2dParams(m.convs[f"reduce{i + 1}"]))
        feat = _run_stage(feat, m.stages[f"decoder{i + 1}"])
    feat = _run_stage(feat, m.stages["refinement"])
    out = _conv3(feat, m.convs["output"]) + inp
    if ph or pw:
        out = crop2d(out, H, W)
    return out


def restore_sr(m: ModelState, lr, s: int) -> Tensor:
    """Bilinear pre-upsampling by ``s`` followed by :func:`forward`."""
    mode = m.config.task_mode
    if mode != f"sr{s}" and mode != "all-in-one":
        raise ContractError(f"restore_sr x{s} on a model configured for {mode!r}")
    if not isinstance(lr, Tensor):
        lr = Tensor(np.asarray(lr, dtype=next(iter(m.params.values())).dtype))
    return forward(m, bilinear_resize(lr, scale=s))


def restore(m: ModelState, degraded, task: str | None = None) -> Tensor:
    """Dispatch on the task: SR inputs are pre-upsampled, everything else goes straight through."""
    task = task or m.config.task_mode
    if task.startswith("sr"):
        return restore_sr(m, degraded, int(task[2:]))
    return forward(m, degraded)


def zero_output_projections(m: ModelState) -> None:
    """Zero every attention/FFN output projection and the output conv.

    Each residual block and the whole network then reduce to the identity.
    """
    for b in m.blocks():
        for t in b.output_projections:
            t.data[...] = 0
    m.convs["output"].data[...] = 0


# -- checkpoints ----------------------------------------------------------------
_CKPT_MAGIC = b"XRCK"


def save_checkpoint(path, m: ModelState, sections: dict[str, dict[str, str]] | None = None,
                    extra: dict[str, Tensor | np.ndarray] | None = None) -> None:
    """Header (canonical config text) followed by named tensor records."""
    allsec = {"model": m.config.to_section(), "state": {"step": str(m.step)}}
    for k, v in (sections or {}).items():
        allsec.setdefault(k, {}).update(v)
    header = cfgtext.dump_sections(allsec).encode("utf-8")
    records = list(m.params.items()) + [(k, v) for k, v in (extra or {}).items()]
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(records)))
    for name, t in records:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_tensor(t, buf)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[ModelState, dict[str, dict[str, str]], dict[str, Tensor]]:
    raw = Path(path).read_bytes()
    fh = io.BytesIO(raw)
    if fh.read(4) != _CKPT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint")
    (n,) = struct.unpack("<I", fh.read(4))
    sections = cfgtext.load_sections(fh.read(n).decode("utf-8"), str(path))
    cfg = ModelConfig.from_section(sections["model"])
    (count,) = struct.unpack("<I", fh.read(4))
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", fh.read(2))
        name = fh.read(ln).decode("utf-8")
        tensors[name] = read_tensor(fh)
    dtype = tensors["patch_embed.weight"].dtype
    m = build_model(cfg, seed=0, dtype=dtype)
    missing = set(m.params) - set(tensors)
    if missing:
        raise ContractError(f"{path}: missing tensors {sorted(missing)[:5]}")
    for name, t in m.params.items():
        if tensors[name].shape != t.shape:
            raise ContractError(f"{path}: {name} has shape {tensors[name].shape}, expected {t.shape}")
        t.data[...] = tensors.pop(name).data
    m.step = int(sections.get("state", {}).get("step", 0))
    return m, sections, tensors


def config_replace(cfg: ModelConfig, **changes) -> ModelConfig:
    return dataclasses.replace(cfg, **changes)


def cast_model(m: ModelState, dtype) -> ModelState:
    """Copy of ``m`` with every parameter cast to ``dtype`` (e.g. float64 for evaluation)."""
    out = build_model(m.config, seed=0, dtype=dtype)
    for name, t in out.params.items():
        t.data[...] = m.params[name].data
    out.step = m.step
    return out
