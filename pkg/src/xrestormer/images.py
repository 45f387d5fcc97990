"""8-bit PNG I/O and a few deterministic synthetic test images."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


def read_png(path) -> np.ndarray:
    """RGB PNG -> float64 [H, W, 3] with value / 255."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """round(clip(x, 0, 1) * 255), halves rounded up (0.5 -> 128)."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def smooth_scene(size: int = 64, seed: int = 0) -> np.ndarray:
    """Piecewise-smooth image: gradients, a few flat disks and bars."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    img = np.stack([
        0.5 + 0.3 * np.sin(2 * np.pi * (1.5 * x + 0.3 * y)),
        0.3 + 0.4 * x * y,
        0.35 + 0.2 * np.cos(2 * np.pi * 2 * y),
    ], axis=-1)
    for _ in range(3):
        cy, cx, r = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.2)
        img[(y - cy) ** 2 + (x - cx) ** 2 < r * r] = rng.uniform(0.05, 0.95, size=3)
    return np.clip(img, 0.0, 1.0)


def texture(size: int = 64, seed: int = 0) -> np.ndarray:
    """Texture-rich image: oriented gratings at several frequencies plus a checker."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size, 3))
    for c in range(3):
        acc = np.zeros((size, size))
        for _ in range(4):
            f = rng.uniform(0.08, 0.3)
            th = rng.uniform(0, np.pi)
            acc += np.sin(2 * np.pi * f * (np.cos(th) * x + np.sin(th) * y) + rng.uniform(0, 2 * np.pi))
        img[..., c] = acc / 8.0 + 0.5
    checker = ((x // 6 + y // 6) % 2)[..., None]
    return np.clip(0.75 * img + 0.25 * checker, 0.0, 1.0)
