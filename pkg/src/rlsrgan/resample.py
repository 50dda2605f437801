"""Separable image resampling: nearest, bicubic (Keys, a=-0.5) and Lanczos-3.

Images are ``H x W x C`` (or ``H x W``) float arrays in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np

__all__ = [
    "ResampleFilter", "NEAREST", "BICUBIC", "LANCZOS", "FILTERS", "get_filter",
    "lanczos_kernel", "bicubic_kernel", "weight_matrix", "resample", "upsample",
    "bicubic_downsample", "padded_size",
]


def lanczos_kernel(x, a: int = 3):
    """Windowed sinc ``sinc(x) * sinc(x / a)`` on ``|x| < a``, zero elsewhere."""
    if a < 1:
        raise ValueError(f"lanczos window must be >= 1, got {a}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(np.abs(x) < a, np.sinc(x) * np.sinc(x / a), 0.0)
    return float(out) if out.ndim == 0 else out


def bicubic_kernel(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    out = np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))
    return float(out) if out.ndim == 0 else out


def _box(x):
    x = np.asarray(x, dtype=np.float64)
    return ((x >= -0.5) & (x < 0.5)).astype(np.float64)


@dataclass(frozen=True)
class ResampleFilter:
    kind: str
    support: float
    kernel: Callable = None

    def __call__(self, x):
        return self.kernel(x)


NEAREST = ResampleFilter("nearest", 0.5, _box)
BICUBIC = ResampleFilter("bicubic", 2.0, bicubic_kernel)
LANCZOS = ResampleFilter("lanczos", 3.0, lanczos_kernel)
FILTERS = {f.kind: f for f in (NEAREST, BICUBIC, LANCZOS)}


def get_filter(name: Union[str, ResampleFilter]) -> ResampleFilter:
    if isinstance(name, ResampleFilter):
        return name
    try:
        return FILTERS[name]
    except KeyError:
        raise ValueError(f"unknown resample filter {name!r}; choose from {sorted(FILTERS)}") from None


def weight_matrix(in_size: int, out_size: int, filt: ResampleFilter) -> np.ndarray:
    """Dense (out_size, in_size) matrix of normalized tap weights for one axis."""
    if in_size < 1 or out_size < 1:
        raise ValueError(f"resample sizes must be >= 1 (in={in_size}, out={out_size})")
    scale = out_size / in_size
    centers = (np.arange(out_size) + 0.5) / scale - 0.5
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    if filt.kind == "nearest":
        # unstretched box on [-0.5, 0.5): ties resolve to the lower index
        idx = np.clip(np.ceil(centers - 0.5).astype(np.int64), 0, in_size - 1)
        mat[np.arange(out_size), idx] = 1.0
        return mat
    stretch = max(1.0, 1.0 / scale)
    support = filt.support * stretch
    for o, c in enumerate(centers):
        lo = int(math.floor(c - support))
        hi = int(math.ceil(c + support))
        taps = np.arange(lo, hi + 1)
        w = filt((taps - c) / stretch)
        np.add.at(mat[o], np.clip(taps, 0, in_size - 1), w)
        total = mat[o].sum()
        mat[o] /= total
    return mat


def resample(img: np.ndarray, out_h: int, out_w: int, filt: Union[str, ResampleFilter] = "lanczos",
             vertical_first: bool = False) -> np.ndarray:
    """Resize ``img`` to ``(out_h, out_w)`` with a separable two-pass filter.

    Downscaling stretches the kernel by the scale factor. Borders clamp to
    the edge pixel; the result is clipped to [0, 1].
    """
    filt = get_filter(filt)
    arr = np.asarray(img)
    if arr.size == 0 or arr.ndim not in (2, 3):
        raise ValueError(f"resample needs a non-empty HxW or HxWxC image, got shape {arr.shape}")
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, _ = arr.shape
    wy = weight_matrix(h, out_h, filt)
    wx = weight_matrix(w, out_w, filt)
    work = arr.astype(np.float64)
    if vertical_first:
        work = np.einsum("ph,hwc->pwc", wy, work)
        work = np.einsum("ow,pwc->poc", wx, work)
    else:
        work = np.einsum("ow,hwc->hoc", wx, work)
        work = np.einsum("ph,hoc->poc", wy, work)
    out = np.clip(work, 0.0, 1.0)
    out_dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else np.float32
    out = out.astype(out_dtype)
    return out[:, :, 0] if squeeze else out


def upsample(img: np.ndarray, r: int, filt: Union[str, ResampleFilter] = "lanczos") -> np.ndarray:
    h, w = np.shape(img)[:2]
    return resample(img, h * r, w * r, filt)


def padded_size(n: int, r: int) -> int:
    return -(-n // r) * r


def bicubic_downsample(img: np.ndarray, r: int) -> np.ndarray:
    """Downsample by an integer factor with a stretched bicubic kernel.

    Dimensions not divisible by ``r`` are first reflection-padded on the
    bottom/right to the next multiple; callers recover the original size
    from their own metadata and crop after upsampling.
    """
    if r <= 0:
        raise ValueError(f"downsampling factor must be positive, got {r}")
    arr = np.asarray(img)
    if arr.size == 0:
        raise ValueError("cannot downsample an empty image")
    h, w = arr.shape[:2]
    ph, pw = padded_size(h, r) - h, padded_size(w, r) - w
    if ph or pw:
        pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
        mode = "reflect" if ph < h and pw < w else "symmetric"
        arr = np.pad(arr, pad, mode=mode)
    return resample(arr, arr.shape[0] // r, arr.shape[1] // r, BICUBIC)


def downsampled_shape(h: int, w: int, r: int) -> Tuple[int, int]:
    return padded_size(h, r) // r, padded_size(w, r) // r
