import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xrestormer.errors import ContractError
from xrestormer.metrics import MetricConfig, metric_config_for, psnr, rgb_to_y, ssim

Y_CFG = MetricConfig(use_y_channel=True)


def rand_img(seed, shape=(24, 20, 3)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


# -- Y channel ----------------------------------------------------------------------
def test_y_black_white_red():
    assert abs(rgb_to_y(np.zeros((1, 1, 3)))[0, 0, 0] - 16 / 255) < 1e-15
    assert abs(rgb_to_y(np.ones((1, 1, 3)))[0, 0, 0] - 235 / 255) < 1e-15
    assert abs(rgb_to_y(np.array([[[1.0, 0, 0]]]))[0, 0, 0] - (65.481 + 16) / 255) < 1e-15
    assert abs((65.481 + 16) / 255 - 0.31953) < 1e-5


def test_y_range_and_shape():
    y = rgb_to_y(rand_img(0))
    assert y.shape == (24, 20, 1)
    assert y.min() >= 16 / 255 and y.max() <= 235 / 255


# -- PSNR ----------------------------------------------------------------------------
def test_psnr_zero_vs_half():
    assert abs(psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5)) - 6.0206) < 1e-3


def test_psnr_identical_is_inf_with_and_without_y():
    x = rand_img(1)
    assert psnr(x, x) == math.inf
    assert psnr(x, x, Y_CFG) == math.inf


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_psnr_matches_two_line_formula(seed):
    a, b = rand_img(seed), rand_img(seed + 10)
    mse = ((a - b) ** 2).mean()
    assert abs(psnr(a, b) - 10 * math.log10(1 / mse)) < 1e-9


def test_psnr_y_and_crop_formula():
    a, b = rand_img(3, (20, 20, 3)), rand_img(4, (20, 20, 3))
    w = np.array([65.481, 128.553, 24.966])
    ya, yb = (a @ w + 16) / 255, (b @ w + 16) / 255
    mse = ((ya[4:-4, 4:-4] - yb[4:-4, 4:-4]) ** 2).mean()
    got = psnr(a, b, MetricConfig(use_y_channel=True, crop_border=4))
    assert abs(got - 10 * math.log10(1 / mse)) < 1e-9


def test_psnr_decreases_with_noise():
    x = rand_img(5, (32, 32, 3))
    n = np.random.default_rng(6).standard_normal(x.shape)
    vals = [psnr(x, x + a * n) for a in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_shape_mismatch():
    with pytest.raises(ContractError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ContractError):
        ssim(np.zeros((12, 12, 3)), np.zeros((12, 13, 3)))


def test_crop_that_empties_the_image():
    with pytest.raises(ContractError):
        psnr(np.zeros((8, 8, 3)), np.ones((8, 8, 3)), MetricConfig(crop_border=4))


def test_metric_config_for_tasks():
    assert metric_config_for("sr4") == MetricConfig(use_y_channel=True, crop_border=4)
    assert metric_config_for("sr2").crop_border == 2
    assert metric_config_for("derain").use_y_channel
    assert metric_config_for("denoise") == MetricConfig()


# -- SSIM ----------------------------------------------------------------------------
def loop_ssim(a, b):
    """Direct per-window SSIM: every 11x11 patch fully inside the image."""
    x = np.arange(11) - 5.0
    g = np.exp(-(x**2) / 4.5)
    w = np.outer(g, g)
    w /= w.sum()
    C1, C2 = 0.01**2, 0.03**2
    vals = []
    for c in range(a.shape[2]):
        for i in range(a.shape[0] - 10):
            for j in range(a.shape[1] - 10):
                pa, pb = a[i:i + 11, j:j + 11, c], b[i:i + 11, j:j + 11, c]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma**2 + mb**2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def test_ssim_self_is_one():
    x = rand_img(7)
    assert abs(ssim(x, x) - 1) < 1e-9
    assert abs(ssim(x, x, Y_CFG) - 1) < 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_symmetric(seed):
    a, b = rand_img(seed), rand_img(seed + 20)
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-12


@pytest.mark.parametrize("seed", [0, 1])
def test_ssim_matches_window_loop(seed):
    a = rand_img(seed, (15, 14, 2))
    b = np.clip(a + 0.1 * np.random.default_rng(seed + 1).standard_normal(a.shape), 0, 1)
    assert abs(ssim(a, b) - loop_ssim(a, b)) < 1e-10


@pytest.mark.parametrize("c", [0.0, 0.3, 0.85])
def test_ssim_constants_closed_form(c):
    # zero variance everywhere: only the luminance term survives, structure term is C2/C2
    a, b = np.full((16, 16, 1), c), np.full((16, 16, 1), c + 0.1)
    C1 = 0.01**2
    want = (2 * c * (c + 0.1) + C1) / (c**2 + (c + 0.1) ** 2 + C1)
    assert abs(ssim(a, b) - want) < 1e-9


def test_ssim_too_small():
    with pytest.raises(ContractError):
        ssim(np.zeros((10, 30, 3)), np.zeros((10, 30, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_ssim_in_range(seed, amp):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (12, 13, 1))
    b = a + amp * rng.standard_normal(a.shape)
    v = ssim(a, b)
    assert -1 - 1e-12 <= v <= 1 + 1e-12
    if amp > 1e-3:
        assert v < 1
