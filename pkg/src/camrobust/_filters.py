"""Small shared filtering helpers (Gaussian kernels, reflected convolution).

Used by the perturbation engine and by segmentation pre-smoothing so both
share one pinned border convention: symmetric reflection (d c b a | a b c d).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage


def gaussian_kernel_2d(sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian kernel with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    kernel = np.exp(-(yy * yy + xx * xx) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def convolve_reflect(channel: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D convolution with symmetric-reflect border handling."""
    return ndimage.convolve(channel, kernel, mode="reflect")


def smooth_rgb(values: np.ndarray, sigma: float) -> np.ndarray:
    """Per-channel Gaussian smoothing of an (H, W, 3) float array."""
    if sigma <= 0:
        return values.copy()
    kernel = gaussian_kernel_2d(sigma)
    out = np.empty_like(values)
    for ch in range(values.shape[2]):
        out[:, :, ch] = convolve_reflect(values[:, :, ch], kernel)
    return out
