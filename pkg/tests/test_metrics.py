"""PSNR and SSIM: hand-computable values, an independent windowed oracle,
and argument handling."""

from __future__ import annotations

import math

import numpy as np
import pytest

import shimmer as sh
from shimmer.errors import ArgumentError
from shimmer.metrics import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from shimmer.rng import Rng


# ---------------------------------------------------------------- psnr


def test_psnr_identical_is_infinite():
    img = Rng(60).uniform(144).reshape(12, 12)
    assert sh.psnr(img, img) == math.inf


def test_psnr_known_mse():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)  # MSE 0.01
    assert abs(sh.psnr(a, b) - 20.0) <= 1e-12


def test_psnr_half_scale_offset():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.5)  # MSE 0.25
    assert abs(sh.psnr(a, b) - 6.0206) <= 1e-4


def test_psnr_symmetric():
    a = Rng(61).uniform(64).reshape(8, 8)
    b = Rng(62).uniform(64).reshape(8, 8)
    assert sh.psnr(a, b) == sh.psnr(b, a)


def test_psnr_peak_rescales():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert abs(sh.psnr(a, b, peak=2.0) - (20.0 + 10 * math.log10(4.0))) <= 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ArgumentError):
        sh.psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_psnr_accepts_images_and_arrays():
    img = sh.Image(np.full((4, 4), 0.3))
    assert sh.psnr(img, np.full((4, 4), 0.3)) == math.inf


# ---------------------------------------------------------------- ssim


def _naive_ssim(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    # Direct per-window evaluation with an explicit 2D Gaussian mask.
    n = SSIM_WINDOW
    off = np.arange(n) - (n - 1) / 2.0
    g1 = np.exp(-0.5 * (off / SSIM_SIGMA) ** 2)
    g1 /= g1.sum()
    w = np.outer(g1, g1)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    vals = []
    for i in range(x.shape[0] - n + 1):
        for j in range(x.shape[1] - n + 1):
            wx = x[i : i + n, j : j + n]
            wy = y[i : i + n, j : j + n]
            mx = (w * wx).sum()
            my = (w * wy).sum()
            vx = (w * wx * wx).sum() - mx * mx
            vy = (w * wy * wy).sum() - my * my
            vxy = (w * wx * wy).sum() - mx * my
            num = (2 * mx * my + c1) * (2 * vxy + c2)
            den = (mx * mx + my * my + c1) * (vx + vy + c2)
            vals.append(num / den)
    return float(np.mean(vals))


def test_ssim_identical_is_one():
    img = Rng(63).uniform(256).reshape(16, 16)
    assert sh.ssim(img, img) == 1.0


def test_ssim_matches_naive_oracle():
    a = Rng(64).uniform(256).reshape(16, 16)
    b = np.clip(a + 0.1 * Rng(65).normal(256).reshape(16, 16), 0.0, 1.0)
    assert abs(sh.ssim(a, b) - _naive_ssim(a, b)) <= 1e-6


def test_ssim_inverted_structure_is_negative():
    yy, xx = np.mgrid[0:16, 0:16]
    a = np.where((xx + yy) % 2 == 0, 0.3, 0.7)
    b = 1.0 - a  # same means, anti-correlated structure
    assert sh.ssim(a, b) < 0.0


def test_ssim_window_size_guard():
    small = np.zeros((10, 10))
    with pytest.raises(ArgumentError):
        sh.ssim(small, small)


def test_ssim_shape_mismatch():
    with pytest.raises(ArgumentError):
        sh.ssim(np.zeros((16, 16)), np.zeros((16, 17)))


def test_metrics_channel_permutation_invariance():
    rgb_a = Rng(66).uniform(16 * 16 * 3).reshape(16, 16, 3)
    rgb_b = Rng(67).uniform(16 * 16 * 3).reshape(16, 16, 3)
    perm = (2, 0, 1)
    # permutation changes float summation order, so allow rounding noise
    assert abs(sh.psnr(rgb_a, rgb_b) - sh.psnr(rgb_a[..., perm], rgb_b[..., perm])) <= 1e-9
    assert abs(sh.ssim(rgb_a, rgb_b) - sh.ssim(rgb_a[..., perm], rgb_b[..., perm])) <= 1e-9


def test_ssim_color_reduces_to_gray():
    rgb = Rng(68).uniform(16 * 16 * 3).reshape(16, 16, 3)
    assert sh.ssim(rgb, rgb) == 1.0
