"""PSNR and SSIM on [0, 1] images, optionally on the BT.601 luma channel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError

PSNR_INF = math.inf  # identical images; excluded from averages by the report layer


@dataclass(frozen=True)
class MetricConfig:
    use_y_channel: bool = False
    crop_border: int = 0
    data_range: float = 1.0


def metric_config_for(task: str) -> MetricConfig:
    """Y channel for SR and deraining; SR also shaves ``scale`` border pixels."""
    if task.startswith("sr"):
        scale = int(task[2:]) if task[2:] else 4
        return MetricConfig(use_y_channel=True, crop_border=scale)
    if task == "derain":
        return MetricConfig(use_y_channel=True)
    return MetricConfig()


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """[H, W, 3] RGB in [0, 1] -> [H, W, 1] luma in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    y = (65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2] + 16.0) / 255.0
    return y[..., None]


def _prepare(a, b, cfg: MetricConfig):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if cfg.use_y_channel and a.shape[-1] == 3:
        a, b = rgb_to_y(a), rgb_to_y(b)
    c = cfg.crop_border
    if c:
        if a.shape[0] <= 2 * c or a.shape[1] <= 2 * c:
            raise ContractError(f"crop_border {c} leaves nothing of a {a.shape[:2]} image")
        a, b = a[c:-c, c:-c], b[c:-c, c:-c]
    return a, b


def psnr(a, b, cfg: MetricConfig = MetricConfig()) -> float:
    a, b = _prepare(a, b, cfg)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10.0 * np.log10(cfg.data_range**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_channel(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    C1 = (0.01 * data_range) ** 2
    C2 = (0.03 * data_range) ** 2
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * sab + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (saa + sbb + C2)
    return float(np.mean(num / den))


def ssim(a, b, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean SSIM over 11x11 Gaussian (sigma 1.5) windows fully inside the image,
    averaged over channels."""
    a, b = _prepare(a, b, cfg)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ContractError(f"SSIM needs at least 11 x 11 pixels, got {a.shape[:2]}")
    vals = [_ssim_channel(a[..., c], b[..., c], cfg.data_range) for c in range(a.shape[-1])]
    return float(np.mean(vals))
