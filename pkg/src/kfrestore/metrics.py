"""Full-reference quality metrics: PSNR and SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, TooSmall

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
# metrics that need pretrained models or external tools; merged in from elsewhere
EXTERNAL_METRICS = ("lpips", "brisque", "contrique", "contrique_fr", "vmaf", "vmaf_neg")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all channels; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def to_luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ np.asarray(LUMA_WEIGHTS)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over every fully-contained Gaussian window of the luma channel."""
    a, b = _pair(a, b)
    ya, yb = to_luma(a), to_luma(b)
    if ya.shape[0] < window or ya.shape[1] < window:
        raise TooSmall(f"image {ya.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(ya, g)
    mu_b = _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, g) - mu_b * mu_b
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(np.mean(smap))


@dataclass
class MetricReport:
    """Per-frame PSNR/SSIM with stream means; ``None`` marks frames without ground truth."""

    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, psnr_val, ssim_val) -> None:
        self.psnr.append(psnr_val)
        self.ssim.append(ssim_val)

    @staticmethod
    def _mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_psnr(self):
        return self._mean(self.psnr)

    @property
    def mean_ssim(self):
        return self._mean(self.ssim)
