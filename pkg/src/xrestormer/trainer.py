"""L1 training with AdamW, cosine annealing with restarts, flip augmentation,
random aligned crops and uniform all-in-one task mixing."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as cfgtext
from . import degradations as deg
from .errors import ConfigError, ContractError, NumericError
from .model import ModelState, forward, load_checkpoint, save_checkpoint
from .nn import bilinear_matrix
from .tensor import Tensor, backward, mean, tabs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0
    cosine_periods: tuple[int, ...] = (92000, 208000)
    lr_min: float = 1e-6
    total_iters: int = 300000
    patch: int = 256
    batch: int = 32
    hflip: bool = True
    vflip: bool = True
    tasks: tuple[str, ...] = deg.ALL_IN_ONE_TASKS
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0

    def __post_init__(self):
        if sum(self.cosine_periods) != self.total_iters:
            raise ConfigError(f"cosine periods {self.cosine_periods} must sum to total_iters={self.total_iters}")
        if not self.lr_min < self.lr0:
            raise ConfigError("lr_min must be below lr0")
        if self.patch < 1 or self.batch < 1:
            raise ConfigError("patch and batch must be positive")

    def compressed(self, total_iters: int, **overrides) -> TrainConfig:
        """Same schedule shape squeezed into ``total_iters`` iterations."""
        scale = total_iters / self.total_iters
        periods = [max(1, round(p * scale)) for p in self.cosine_periods[:-1]]
        periods.append(total_iters - sum(periods))
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(cosine_periods=tuple(periods), total_iters=total_iters, **overrides)
        return TrainConfig(**values)

    def to_section(self) -> dict[str, str]:
        return cfgtext.dataclass_to_section(self)

    @classmethod
    def from_section(cls, section: dict[str, str]) -> TrainConfig:
        return cfgtext.dataclass_from_section(cls, section, "[train]")


# -- loss and schedule --------------------------------------------------------------
def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ContractError(f"l1_loss shapes differ: {pred.shape} vs {target.shape}")
    return mean(tabs(pred - target))


def lr_at(it: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr0 to lr_min inside each period, restarting at each boundary."""
    if not 0 <= it < cfg.total_iters:
        raise ContractError(f"iteration {it} outside [0, {cfg.total_iters})")
    start = 0
    for period in cfg.cosine_periods:
        if it < start + period:
            phase = (it - start) / period
            return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + math.cos(math.pi * phase))
        start += period
    raise AssertionError("unreachable")


# -- optimizer ---------------------------------------------------------------------
@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(state: OptimizerState, params: dict[str, Tensor], lr: float, cfg: TrainConfig) -> OptimizerState:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    Parameters without a gradient are left untouched.
    """
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad.data).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if cfg.weight_decay:
            p.data *= 1.0 - lr * cfg.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


# -- data ----------------------------------------------------------------------------
@dataclass
class Sample:
    clean: np.ndarray  # [H, W, 3]
    degraded: np.ndarray | None = None  # aligned; low resolution for SR
    spec: object | None = None  # applied to the cropped clean patch when degraded is None


@dataclass
class PairedDataset:
    samples: list[Sample]
    task: str  # denoise | deblur | derain | dehaze | sr2 | sr4 | all-in-one

    def __len__(self) -> int:
        return len(self.samples)


def draw_task(rng: np.random.Generator, tasks=deg.ALL_IN_ONE_TASKS) -> str:
    return tasks[int(rng.integers(len(tasks)))]


def _upsample(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    Ry = bilinear_matrix(img.shape[0], size[0])
    Rx = bilinear_matrix(img.shape[1], size[1])
    return np.einsum("ih,hwc,jw->ijc", Ry, img, Rx)


def _crop_pair(rng, sample: Sample, task: str, P: int):
    clean = sample.clean
    H, W = clean.shape[:2]
    if P > H or P > W:
        raise ContractError(f"patch {P} larger than image {(H, W)}")
    if task.startswith("sr"):
        s = int(task[2:]) if task[2:] else (sample.spec.scale if sample.spec is not None else 4)
        if P % s:
            raise ContractError(f"patch {P} not divisible by SR scale {s}")
        y = int(rng.integers(0, (H - P) // s + 1)) * s
        x = int(rng.integers(0, (W - P) // s + 1)) * s
        gt = clean[y:y + P, x:x + P]
        if sample.degraded is not None:
            lr = sample.degraded[y // s:(y + P) // s, x // s:(x + P) // s]
        else:
            lr = deg.degrade_sr(gt, s)
        return _upsample(lr, (P, P)), gt
    y = int(rng.integers(0, H - P + 1))
    x = int(rng.integers(0, W - P + 1))
    gt = clean[y:y + P, x:x + P]
    if sample.degraded is not None:
        return sample.degraded[y:y + P, x:x + P], gt
    if sample.spec is None:
        raise ContractError("sample has neither a degraded image nor a degradation spec")
    return deg.apply(gt, sample.spec), gt


def sample_batch(dataset: PairedDataset, cfg: TrainConfig, rng: np.random.Generator, dtype=np.float32):
    """Random aligned crops with identical flips on input and target.

    Returns ([B, 3, P, P] inputs, [B, 3, P, P] targets, task per sample). SR inputs
    come back bilinearly upsampled to the target extent.
    """
    if len(dataset) == 0:
        raise ContractError("empty dataset")
    inputs, targets, tasks = [], [], []
    for _ in range(cfg.batch):
        sample = dataset.samples[int(rng.integers(len(dataset)))]
        if dataset.task == "all-in-one":
            task = draw_task(rng, cfg.tasks)
            spec = deg.random_spec(task, rng)
            if task == "sr":
                task = f"sr{spec.scale}"
            sample = Sample(sample.clean, None, spec)
        else:
            task = dataset.task
        inp, gt = _crop_pair(rng, sample, task, cfg.patch)
        if cfg.hflip and rng.random() < 0.5:
            inp, gt = inp[:, ::-1], gt[:, ::-1]
        if cfg.vflip and rng.random() < 0.5:
            inp, gt = inp[::-1], gt[::-1]
        inputs.append(inp.transpose(2, 0, 1))
        targets.append(gt.transpose(2, 0, 1))
        tasks.append(task)
    return np.stack(inputs).astype(dtype), np.stack(targets).astype(dtype), tasks


# -- loop ------------------------------------------------------------------------------
def _rng_to_text(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _rng_from_text(text: str) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(text)
    return rng


def save_training_checkpoint(path, model: ModelState, opt: OptimizerState, rng, cfg: TrainConfig) -> None:
    extra = {}
    for name in model.params:
        if name in opt.m:
            extra[f"optim.m.{name}"] = opt.m[name]
            extra[f"optim.v.{name}"] = opt.v[name]
    sections = {"train": cfg.to_section(), "optim": {"step": str(opt.step), "rng": _rng_to_text(rng)}}
    save_checkpoint(path, model, sections, extra)


def load_training_checkpoint(path):
    model, sections, extra = load_checkpoint(path)
    opt = OptimizerState(step=int(sections["optim"]["step"]))
    for key, t in extra.items():
        kind, _, name = key[len("optim."):].partition(".")
        getattr(opt, kind)[name] = t.data.copy()
    rng = _rng_from_text(sections["optim"]["rng"])
    return model, opt, rng, TrainConfig.from_section(sections["train"])


def train(model: ModelState, dataset: PairedDataset, cfg: TrainConfig, *, trace_path=None,
          checkpoint_path=None, resume: bool = False, stop_at: int | None = None,
          callback: Callable[[int, ModelState], bool] | None = None):
    """sample -> forward -> L1 -> backward -> AdamW for ``cfg.total_iters`` iterations.

    Returns ``(model, trace)`` with one ``(iter, lr, loss)`` row per step. With
    ``resume`` the model, optimizer and sampler state are restored from
    ``checkpoint_path``, which also receives the final state. ``stop_at`` ends the
    loop early without a final save (simulated interruption); ``callback``
    returning True also ends it.
    """
    mt, dt = model.config.task_mode, dataset.task
    if mt != dt and not (mt == "all-in-one" and dt == "all-in-one"):
        raise ContractError(f"model task {mt!r} does not match dataset task {dt!r}")
    dtype = next(iter(model.params.values())).dtype
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState()
    start = 0
    if resume:
        if checkpoint_path is None or not Path(checkpoint_path).exists():
            raise ContractError("resume requested without an existing checkpoint")
        loaded, opt, rng, _ = load_training_checkpoint(checkpoint_path)
        for name, t in model.params.items():
            t.data[...] = loaded.params[name].data
        model.step = start = loaded.step
    writer = fh = None
    if trace_path is not None:
        trace_path = Path(trace_path)
        kept = []
        if resume and trace_path.exists():
            with trace_path.open() as f:
                kept = [r for r in csv.reader(f)][1:]
            kept = [r for r in kept if int(r[0]) < start]
        fh = trace_path.open("w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iter", "lr", "loss"])
        writer.writerows(kept)
    trace: list[tuple[int, float, float]] = []
    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    try:
        for it in range(start, end):
            lr = lr_at(it, cfg)
            x, y, _ = sample_batch(dataset, cfg, rng, dtype)
            model.zero_grad()
            loss = l1_loss(forward(model, x), Tensor(y))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at iteration {it} (lr={lr:.3e})")
            backward(loss)
            adamw_step(opt, model.params, lr, cfg)
            model.step = it + 1
            trace.append((it, lr, value))
            if writer is not None:
                writer.writerow([it, repr(lr), repr(value)])
                fh.flush()
            if cfg.log_every and (it + 1) % cfg.log_every == 0:
                log.info("iter %d lr %.3e loss %.5f", it + 1, lr, value)
            if checkpoint_path is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_training_checkpoint(checkpoint_path, model, opt, rng, cfg)
            if callback is not None and callback(it + 1, model):
                break
    finally:
        if fh is not None:
            fh.close()
    on_interval = cfg.checkpoint_every and model.step % cfg.checkpoint_every == 0
    if checkpoint_path is not None and stop_at is None and trace and not on_interval:
        save_training_checkpoint(checkpoint_path, model, opt, rng, cfg)
    model.zero_grad()
    return model, trace
