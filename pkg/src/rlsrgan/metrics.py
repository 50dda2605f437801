"""PSNR, SSIM and multi-scale SSIM for float images in [0, max_value]."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MetricResult:
    psnr_db: float
    ms_ssim: float


def _as_hwc(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected an HxW or HxWxC image, got shape {arr.shape}")
    return arr


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if max_value <= 0:
        raise ValueError(f"psnr: max_value must be positive, got {max_value}")
    diff = a - b
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    # one log of the ratio: a peak-sized error gives exactly 0 dB
    return 10.0 * math.log10(max_value * max_value / mse)


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation of an HxWxC stack with the 1-d window ``g``."""
    k = g.size
    h, w = x.shape[:2]
    rows = sum(g[i] * x[i:h - k + 1 + i] for i in range(k))
    return sum(g[j] * rows[:, j:w - k + 1 + j] for j in range(k))


def ssim(a, b, max_value: float = 1.0) -> Tuple[float, float]:
    """Return ``(mean_ssim, mean_contrast_structure)`` averaged over channels."""
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if h < WINDOW_SIZE or w < WINDOW_SIZE:
        raise ValueError(
            f"ssim: image {h}x{w} is smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window; "
            "use fewer MS-SSIM scales or a larger image")
    c1 = (K1 * max_value) ** 2
    c2 = (K2 * max_value) ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    cs_map = (2.0 * cov + c2) / (var_a + var_b + c2)
    lum_map = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    ssim_map = lum_map * cs_map
    per_channel_ssim = ssim_map.mean(axis=(0, 1))
    per_channel_cs = cs_map.mean(axis=(0, 1))
    return float(per_channel_ssim.mean()), float(per_channel_cs.mean())


def max_scales(h: int, w: int) -> int:
    n = 0
    while min(h, w) >= WINDOW_SIZE:
        n += 1
        h, w = h // 2, w // 2
    return n


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim_weights(scales: int) -> Tuple[float, ...]:
    if scales == len(MS_SSIM_WEIGHTS):
        return MS_SSIM_WEIGHTS
    w = np.asarray(MS_SSIM_WEIGHTS[:scales])
    return tuple(w / w.sum())


def ms_ssim(a, b, scales: Optional[int] = 5, max_value: float = 1.0) -> float:
    """Multi-scale SSIM.

    Contrast-structure terms from the finer scales and full SSIM at the
    coarsest scale are combined as a weighted geometric product. With fewer
    than five scales the leading weights are renormalised to sum to one.
    ``scales=None`` picks the largest feasible count (at most five).
    Negative terms are clamped to zero before exponentiation.
    """
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"ms_ssim: shape mismatch {a.shape} vs {b.shape}")
    feasible = max_scales(*a.shape[:2])
    if scales is None:
        scales = min(feasible, len(MS_SSIM_WEIGHTS))
    if scales < 1 or scales > len(MS_SSIM_WEIGHTS):
        raise ValueError(f"ms_ssim: scales must be in 1..{len(MS_SSIM_WEIGHTS)}, got {scales}")
    if scales > feasible:
        raise ValueError(
            f"ms_ssim: {a.shape[0]}x{a.shape[1]} image supports at most {feasible} scale(s), "
            f"{scales} requested")
    weights = ms_ssim_weights(scales)
    result = 1.0
    for s in range(scales):
        full, cs = ssim(a, b, max_value)
        term = full if s == scales - 1 else cs
        result *= max(term, 0.0) ** weights[s]
        if s < scales - 1:
            a, b = _halve(a), _halve(b)
    return float(result)


def evaluate_pair(reference, candidate, max_value: float = 1.0) -> MetricResult:
    """PSNR plus MS-SSIM at as many scales as the image supports."""
    return MetricResult(psnr(reference, candidate, max_value), ms_ssim(reference, candidate, None, max_value))
