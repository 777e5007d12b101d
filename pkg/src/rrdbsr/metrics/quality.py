"""Full-reference fidelity on the luminance channel."""
from __future__ import annotations

import math

import numpy as np
import torch
from scipy.ndimage import correlate1d

from ..data import rgb_to_y

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _y(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    return rgb_to_y(np.asarray(img, dtype=np.float64))


def _crop(y: np.ndarray, border: int) -> np.ndarray:
    if border < 0:
        raise ValueError("border_crop must be >= 0")
    if border == 0:
        return y
    if 2 * border >= min(y.shape[-2:]):
        raise ValueError(f"border_crop {border} removes the whole image")
    return y[..., border:-border, border:-border]


def psnr_y(sr, hr, border_crop: int = 0) -> float:
    """PSNR in dB on BT.601 luma with unit peak; ``inf`` for identical inputs."""
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    a, b = _crop(_y(sr), border_crop), _crop(_y(hr), border_crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(img, g, axis=-2, mode="reflect")
    out = correlate1d(out, g, axis=-1, mode="reflect")
    return out[..., r:-r, r:-r]


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim_y(sr, hr, border_crop: int = 0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows of the luma channel."""
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    a, b = _crop(_y(sr), border_crop), _crop(_y(hr), border_crop)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(np.mean(ssim_map(a, b)))


def perceptual_index(ma_score: float, niqe_score: float) -> float:
    """Lower is better."""
    return 0.5 * ((10.0 - ma_score) + niqe_score)
