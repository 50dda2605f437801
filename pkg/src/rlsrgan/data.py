"""Image corpora: directory loading, procedural synthetic images and
LR/HR training-patch sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .codec import JpegCodec, load_image, png_size
from .model import images_to_batch
from .resample import bicubic_downsample

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp"}
SYNTHETIC_KINDS = ("gradient", "checkerboard", "blobs")


@dataclass
class Corpus:
    ids: List[str]
    paths: List[Optional[Path]]
    split: str = "train"
    skipped: int = 0
    _images: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("corpus image ids must be unique")

    @classmethod
    def from_images(cls, items: Sequence[Tuple[str, np.ndarray]], split: str = "train") -> "Corpus":
        corpus = cls([i for i, _ in items], [None] * len(items), split)
        corpus._images = {n: np.asarray(img, dtype=np.float32) for n, (_, img) in enumerate(items)}
        return corpus

    def __len__(self) -> int:
        return len(self.ids)

    def image(self, index: int) -> np.ndarray:
        img = self._images.get(index)
        if img is None:
            img = load_image(self.paths[index])
            self._images[index] = img
        return img

    def original_bytes(self, index: int) -> int:
        """On-disk size for file-backed images, PNG size for in-memory ones."""
        path = self.paths[index]
        if path is not None:
            return path.stat().st_size
        return png_size(self.image(index))

    def subset(self, indices: Sequence[int]) -> "Corpus":
        return Corpus.from_images([(self.ids[i], self.image(i)) for i in indices], self.split)


def load_corpus(directory: Union[str, Path], split: str = "train") -> Corpus:
    """Load every decodable image under ``directory/split`` (or ``directory``).

    Files are ordered lexicographically; undecodable files are skipped with
    a warning and counted in ``Corpus.skipped``.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    if (root / split).is_dir():
        root = root / split
    candidates = sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    ids, paths, images, skipped = [], [], {}, 0
    for path in candidates:
        try:
            img = load_image(path)
        except Exception as exc:  # PIL raises a zoo of types for bad files
            log.warning("skipping undecodable image %s: %s", path, exc)
            skipped += 1
            continue
        images[len(ids)] = img
        ids.append(path.name)
        paths.append(path)
    if not ids:
        raise ValueError(f"no decodable images in {root} ({skipped} skipped)")
    corpus = Corpus(ids, paths, split, skipped)
    corpus._images = images
    return corpus


# -- procedural images ------------------------------------------------------------

def _colour(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.05, 0.95, size=3)


def synthetic_image(rng: np.random.Generator, kind: str, size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    if kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        t = np.cos(theta) * xx + np.sin(theta) * yy
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
        a, b = _colour(rng), _colour(rng)
        img = a + (b - a) * t[:, :, None]
    elif kind == "checkerboard":
        cell = int(rng.choice([6, 8, 12, 16]))
        oy, ox = rng.integers(0, cell, size=2)
        iy = (np.arange(size) + oy) // cell
        ix = (np.arange(size) + ox) // cell
        mask = ((iy[:, None] + ix[None, :]) % 2).astype(np.float64)
        a, b = _colour(rng), _colour(rng)
        img = a + (b - a) * mask[:, :, None]
    elif kind == "blobs":
        img = np.broadcast_to(_colour(rng) * 0.5, (size, size, 3)).copy()
        for _ in range(int(rng.integers(2, 6))):
            cy, cx = rng.uniform(0, 1, size=2)
            sigma = rng.uniform(0.06, 0.25)
            weight = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
            img += weight[:, :, None] * (_colour(rng) - 0.4)
    else:
        raise ValueError(f"unknown synthetic image kind {kind!r}")
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def procedural_corpus(n: int = 200, size: int = 64, seed: int = 0, split: str = "train") -> Corpus:
    """Deterministic mix of gradients, checkerboards and Gaussian blobs."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        kind = SYNTHETIC_KINDS[i % len(SYNTHETIC_KINDS)]
        items.append((f"{split}-{i:04d}-{kind}", synthetic_image(rng, kind, size)))
    return Corpus.from_images(items, split)


def photo_like(size: int = 256, seed: int = 0) -> np.ndarray:
    """Smooth low-frequency scene with soft objects and fine sensor grain."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.zeros((size, size, 3))
    for _ in range(6):
        fy, fx = rng.uniform(0.3, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        img += 0.12 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[:, :, None] * rng.uniform(0.3, 1.0, 3)
    img += 0.45
    for _ in range(8):
        cy, cx = rng.uniform(0, 1, size=2)
        sigma = rng.uniform(0.03, 0.15)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        img += blob[:, :, None] * rng.uniform(-0.35, 0.35, size=3)
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# -- training patches ----------------------------------------------------------------

def sample_patch_pair(corpus: Corpus, rng: np.random.Generator, patch_hr: int, r: int,
                      jpeg_quality: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Random ``patch_hr`` square crop and its bicubic-downsampled LR version.

    With ``jpeg_quality`` set, the LR patch is round-tripped through JPEG.
    """
    if patch_hr % r:
        raise ValueError(f"patch size {patch_hr} is not divisible by r={r}")
    eligible = [i for i in range(len(corpus))
                if min(corpus.image(i).shape[:2]) >= patch_hr]
    if not eligible:
        raise ValueError(f"no corpus image is at least {patch_hr}x{patch_hr}")
    img = corpus.image(eligible[int(rng.integers(len(eligible)))])
    h, w = img.shape[:2]
    y = int(rng.integers(0, h - patch_hr + 1))
    x = int(rng.integers(0, w - patch_hr + 1))
    hr = np.ascontiguousarray(img[y:y + patch_hr, x:x + patch_hr])
    lr = bicubic_downsample(hr, r)
    if jpeg_quality is not None:
        codec = JpegCodec()
        lr = codec.decode(codec.encode(lr, jpeg_quality))
    return lr, hr


def sample_batch(corpus: Corpus, rng: np.random.Generator, batch: int, patch_hr: int, r: int,
                 jpeg_quality: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """NCHW arrays ``(lr, hr)`` of ``batch`` patch pairs."""
    pairs = [sample_patch_pair(corpus, rng, patch_hr, r, jpeg_quality) for _ in range(batch)]
    return images_to_batch([p[0] for p in pairs]), images_to_batch([p[1] for p in pairs])
