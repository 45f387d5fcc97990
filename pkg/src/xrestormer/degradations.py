"""Synthetic degradations for paired data: bicubic downscaling, additive
Gaussian noise, trajectory motion blur, additive rain streaks, and haze from
the atmospheric scattering model.

Images are float arrays [H, W, 3] in [0, 1]. Every stochastic degradation
draws from ``numpy.random.default_rng(seed)`` so a spec fully determines its
output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ContractError

# -- specs ----------------------------------------------------------------------


@dataclass(frozen=True)
class SR:
    scale: int = 4
    kernel: str = "bicubic"

    tag = "sr"

    def validate(self):
        if self.scale not in (2, 4):
            raise ConfigError(f"sr scale must be 2 or 4, got {self.scale}")
        if self.kernel != "bicubic":
            raise ConfigError(f"unsupported sr kernel {self.kernel!r}")


@dataclass(frozen=True)
class Noise:
    sigma: float = 50.0  # on the 0-255 scale
    seed: int = 0

    tag = "noise"

    def validate(self):
        if not 0 < self.sigma <= 50:
            raise ConfigError(f"noise sigma must be in (0, 50], got {self.sigma}")


@dataclass(frozen=True)
class MotionBlur:
    offsets: tuple[tuple[float, float], ...] = ((0.0, -1.0), (0.0, 0.0), (0.0, 1.0))  # (dy, dx) pixels

    tag = "blur"

    def validate(self):
        if not self.offsets:
            raise ContractError("motion trajectory is empty")


@dataclass(frozen=True)
class Rain:
    density: float = 0.004  # fraction of pixels seeding a streak
    length: int = 15
    angle: float = 75.0  # degrees, counter-clockwise from the +x axis, y pointing up
    intensity: float = 0.6
    seed: int = 0

    tag = "rain"

    def validate(self):
        if self.intensity < 0:
            raise ConfigError("rain intensity must be non-negative")
        if not 0 <= self.density <= 1:
            raise ConfigError("rain density must be in [0, 1]")
        if self.length < 1:
            raise ConfigError("rain streak length must be positive")


@dataclass(frozen=True)
class Haze:
    beta: float = 1.0
    airlight: float = 0.9
    depth: str = "random"  # random | ramp | constant
    depth_value: float = 1.0  # constant depth, or maximum depth for ramp/random
    seed: int = 0

    tag = "haze"

    def validate(self):
        if self.beta <= 0:
            raise ConfigError("haze beta must be positive")
        if not 0.7 <= self.airlight <= 1.0:
            raise ConfigError(f"atmospheric light must be in [0.7, 1.0], got {self.airlight}")
        if self.depth not in ("random", "ramp", "constant"):
            raise ConfigError(f"unknown depth field {self.depth!r}")
        if self.depth_value < 0:
            raise ConfigError("depth must be non-negative")


DegradationSpec = SR | Noise | MotionBlur | Rain | Haze
SPEC_TYPES = {cls.tag: cls for cls in (SR, Noise, MotionBlur, Rain, Haze)}
TASK_OF_SPEC = {"sr": "sr", "noise": "denoise", "blur": "deblur", "rain": "derain", "haze": "dehaze"}


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ";".join(":".join(_fmt(c) for c in item) for item in v)
    if isinstance(v, float):
        # integral values print bare (50, not 50.0); float() parses both back exactly
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    return str(v)


def spec_to_text(spec) -> str:
    """Canonical one-line form, e.g. ``noise sigma=50 seed=7``."""
    parts = [spec.tag] + [f"{f.name}={_fmt(getattr(spec, f.name))}" for f in fields(spec)]
    return " ".join(parts)


def spec_from_text(text: str):
    tokens = text.split()
    if not tokens or tokens[0] not in SPEC_TYPES:
        raise ConfigError(f"unknown degradation spec {text!r}")
    cls = SPEC_TYPES[tokens[0]]
    defaults = {f.name: f for f in fields(cls)}
    kwargs = {}
    for tok in tokens[1:]:
        key, _, raw = tok.partition("=")
        if key not in defaults:
            raise ConfigError(f"{tokens[0]}: unknown field {key!r}")
        proto = getattr(cls(), key)
        try:
            if isinstance(proto, tuple):
                kwargs[key] = tuple(tuple(float(c) for c in item.split(":")) for item in raw.split(";") if item)
            elif isinstance(proto, bool):
                kwargs[key] = raw == "True"
            elif isinstance(proto, int):
                kwargs[key] = int(raw)
            elif isinstance(proto, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"{tokens[0]}: bad value {raw!r} for {key}") from exc
    spec = cls(**kwargs)
    spec.validate()
    return spec


def with_seed(spec, seed: int):
    if any(f.name == "seed" for f in fields(spec)):
        return type(spec)(**{**{f.name: getattr(spec, f.name) for f in fields(spec)}, "seed": seed})
    return spec


# -- bicubic ----------------------------------------------------------------------
def cubic(x, a: float = -0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def bicubic_weights(n_in: int, n_out: int, a: float = -0.5) -> np.ndarray:
    """[n_out, n_in] resampling matrix with kernel-width scaling when shrinking.

    Output sample i is centered at input coordinate (i + 0.5) * n_in / n_out - 0.5;
    taps falling outside the image are mirrored back (symmetric boundary).
    """
    scale = n_out / n_in
    stretch = 1.0 / scale if scale < 1 else 1.0
    support = 2.0 * stretch
    R = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        lo = int(math.floor(center - support)) + 1
        taps = np.arange(lo, int(math.ceil(center + support)))
        w = cubic((center - taps) / stretch, a) / stretch
        w = w / w.sum()
        period = 2 * n_in
        idx = np.mod(taps, period)
        idx = np.where(idx >= n_in, period - 1 - idx, idx)
        np.add.at(R[i], idx, w)
    return R


def degrade_sr(gt: np.ndarray, s: int) -> np.ndarray:
    """Antialiased bicubic downscaling by an integer factor."""
    H, W = gt.shape[:2]
    if H % s or W % s:
        raise ContractError(f"image extents {(H, W)} not divisible by scale {s}")
    Ry = bicubic_weights(H, H // s)
    Rx = bicubic_weights(W, W // s)
    out = np.einsum("ih,hwc->iwc", Ry, gt)
    return np.einsum("jw,iwc->ijc", Rx, out)


# -- noise -------------------------------------------------------------------------
def degrade_noise(gt: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """gt + N(0, (sigma/255)^2), i.i.d. per pixel and channel, not clipped."""
    if sigma <= 0:
        raise ContractError("noise sigma must be positive")
    rng = np.random.default_rng(seed)
    return gt + rng.standard_normal(gt.shape) * (sigma / 255.0)


# -- motion blur ---------------------------------------------------------------------
def shift_bilinear(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """out(y, x) = img(y - dy, x - dx), bilinear, edges replicated."""
    H, W = img.shape[:2]
    ys = np.clip(np.arange(H) - dy, 0, H - 1)
    xs = np.clip(np.arange(W) - dx, 0, W - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def degrade_blur(gt: np.ndarray, traj: MotionBlur) -> np.ndarray:
    """Average of the image shifted along each trajectory offset."""
    traj.validate()
    acc = np.zeros_like(gt, dtype=np.float64)
    for dy, dx in traj.offsets:
        acc += shift_bilinear(gt, dy, dx)
    return acc / len(traj.offsets)


def random_trajectory(rng: np.random.Generator, steps: int = 9, max_len: float = 6.0) -> MotionBlur:
    angle = rng.uniform(0, np.pi)
    length = rng.uniform(1.0, max_len)
    t = np.linspace(-0.5, 0.5, steps) * length
    bend = rng.uniform(-0.3, 0.3)
    offsets = tuple((float(-np.sin(angle) * s + bend * s * s), float(np.cos(angle) * s)) for s in t)
    return MotionBlur(offsets)


# -- rain --------------------------------------------------------------------------
def line_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized line of ``length`` pixels through the kernel center at ``angle`` degrees."""
    size = length if length % 2 else length + 1
    k = np.zeros((size, size))
    c = size // 2
    theta = math.radians(angle)
    dx, dy = math.cos(theta), -math.sin(theta)  # rows grow downward
    for t in np.linspace(-(length - 1) / 2, (length - 1) / 2, 4 * length):
        x, y = c + t * dx, c + t * dy
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        for yy, xx, w in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
                          (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx)):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] += w
    return k / k.sum()


def rain_streaks(shape: tuple[int, int], rain: Rain) -> np.ndarray:
    """Non-negative streak map [H, W]: sparse seeds smeared by an oriented line."""
    from scipy.signal import fftconvolve

    H, W = shape
    rng = np.random.default_rng(rain.seed)
    seeds = (rng.random((H, W)) < rain.density) * rng.uniform(0.5, 1.0, size=(H, W))
    k = line_kernel(rain.length, rain.angle)
    streak = fftconvolve(seeds, k, mode="same")
    streak = np.maximum(streak, 0.0)
    peak = streak.max()
    if peak > 0:
        streak = streak / peak
    return streak * rain.intensity


def degrade_rain(gt: np.ndarray, rain: Rain) -> np.ndarray:
    rain.validate()
    if rain.intensity == 0:
        return gt.copy()
    R = rain_streaks(gt.shape[:2], rain)
    return np.clip(gt + R[..., None], 0.0, 1.0)


# -- haze --------------------------------------------------------------------------
def depth_field(shape: tuple[int, int], haze: Haze) -> np.ndarray:
    H, W = shape
    if haze.depth == "constant":
        return np.full((H, W), haze.depth_value)
    if haze.depth == "ramp":
        return np.broadcast_to(np.linspace(0.0, haze.depth_value, H)[:, None], (H, W)).copy()
    rng = np.random.default_rng(haze.seed)
    field_ = gaussian_filter(rng.random((H, W)), sigma=max(H, W) / 8.0, mode="reflect")
    lo, hi = field_.min(), field_.max()
    field_ = (field_ - lo) / (hi - lo) if hi > lo else np.zeros_like(field_)
    ramp = np.linspace(0.0, 1.0, H)[:, None]
    return haze.depth_value * (0.5 * field_ + 0.5 * ramp)


def transmission(shape: tuple[int, int], haze: Haze) -> np.ndarray:
    return np.exp(-haze.beta * depth_field(shape, haze))


def degrade_haze(gt: np.ndarray, haze: Haze) -> np.ndarray:
    """gt * t + A * (1 - t) with t = exp(-beta * depth), per pixel."""
    haze.validate()
    t = transmission(gt.shape[:2], haze)[..., None]
    return gt * t + haze.airlight * (1.0 - t)


# -- dispatch ------------------------------------------------------------------------
def apply(gt: np.ndarray, spec) -> np.ndarray:
    spec.validate()
    if isinstance(spec, SR):
        return degrade_sr(gt, spec.scale)
    if isinstance(spec, Noise):
        return degrade_noise(gt, spec.sigma, spec.seed)
    if isinstance(spec, MotionBlur):
        return degrade_blur(gt, spec)
    if isinstance(spec, Rain):
        return degrade_rain(gt, spec)
    if isinstance(spec, Haze):
        return degrade_haze(gt, spec)
    raise ConfigError(f"unknown degradation {spec!r}")


ALL_IN_ONE_TASKS = ("sr", "denoise", "deblur", "derain", "dehaze")


def random_spec(task: str, rng: np.random.Generator):
    """Random degradation of the given task; SR scale in {2, 4}, sigma uniform in (0, 50]."""
    seed = int(rng.integers(0, 2**31 - 1))
    if task == "sr":
        return SR(scale=int(rng.choice([2, 4])))
    if task == "denoise":
        return Noise(sigma=float(50.0 - rng.uniform(0.0, 50.0)), seed=seed)
    if task == "deblur":
        return random_trajectory(rng)
    if task == "derain":
        return Rain(density=float(rng.uniform(0.002, 0.01)), length=int(rng.integers(7, 21)),
                    angle=float(rng.uniform(60, 120)), intensity=float(rng.uniform(0.3, 0.8)), seed=seed)
    if task == "dehaze":
        return Haze(beta=float(rng.uniform(0.5, 2.0)), airlight=float(rng.uniform(0.7, 1.0)),
                    depth=str(rng.choice(["random", "ramp"])), depth_value=1.0, seed=seed)
    raise ConfigError(f"unknown task {task!r}")
