"""Downsample-then-encode compression container and reconstruction.

Container layout (little-endian)::

    offset size field
    0      4    magic b"RLSR"
    4      1    version (1)
    5      4    original width
    9      4    original height
    13     1    channels
    14     1    downsampling factor r
    15     1    payload codec (0 = JPEG, 1 = PNG)
    16     8    payload length
    24     4    CRC-32 of bytes 0..23 followed by the payload
    28     -    payload
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image as PILImage

from .resample import bicubic_downsample, resample

MAGIC = b"RLSR"
VERSION = 1
CODEC_JPEG = 0
CODEC_PNG = 1
CODEC_NAMES = {"jpeg": CODEC_JPEG, "jpg": CODEC_JPEG, "png": CODEC_PNG}
UPSAMPLERS = ("lanczos", "bicubic", "nearest", "model")

_HEADER = struct.Struct("<4sBIIBBBQ")
_CRC = struct.Struct("<I")
HEADER_SIZE = _HEADER.size + _CRC.size

PathLike = Union[str, Path]


class ContainerError(ValueError):
    """Base class for container parse failures."""


class TruncatedContainerError(ContainerError):
    pass


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class LengthMismatchError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class InvalidHeaderError(ContainerError):
    pass


class CodecError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


# -- pixel conversion and file I/O ----------------------------------------------

def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32) / 255.0


def _to_pil(img: np.ndarray) -> PILImage.Image:
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] not in (3, 4):
        raise CodecError(f"cannot encode an image with {arr.shape[2]} channels")
    return PILImage.fromarray(arr)


def _from_pil(pil: PILImage.Image) -> np.ndarray:
    if pil.mode not in ("L", "RGB"):
        pil = pil.convert("RGB")
    return from_uint8(np.asarray(pil))


def load_image(path: PathLike) -> np.ndarray:
    """Read a PNG/JPEG/... file as an HxWxC float32 image in [0, 1]."""
    with PILImage.open(path) as pil:
        pil.load()
        return _from_pil(pil)


def save_image(path: PathLike, img: np.ndarray) -> None:
    path = Path(path)
    fmt = "JPEG" if path.suffix.lower() in (".jpg", ".jpeg") else "PNG"
    _to_pil(img).save(path, format=fmt)


class PngCodec:
    codec_id = CODEC_PNG

    def encode(self, img: np.ndarray, quality: int = 100) -> bytes:
        buf = io.BytesIO()
        _to_pil(img).save(buf, format="PNG", optimize=False, compress_level=9)
        return buf.getvalue()

    def decode(self, data: bytes) -> np.ndarray:
        try:
            with PILImage.open(io.BytesIO(data)) as pil:
                pil.load()
                return _from_pil(pil)
        except Exception as exc:
            raise CodecError(f"PNG decode failed: {exc}") from exc


class JpegCodec:
    codec_id = CODEC_JPEG

    def encode(self, img: np.ndarray, quality: int = 75) -> bytes:
        if not 1 <= quality <= 100:
            raise ValueError(f"JPEG quality must be in [1, 100], got {quality}")
        buf = io.BytesIO()
        try:
            _to_pil(img).save(buf, format="JPEG", quality=int(quality), optimize=False)
        except OSError as exc:
            raise CodecError(f"JPEG encode failed: {exc}") from exc
        return buf.getvalue()

    def decode(self, data: bytes) -> np.ndarray:
        try:
            with PILImage.open(io.BytesIO(data)) as pil:
                pil.load()
                return _from_pil(pil)
        except Exception as exc:
            raise CodecError(f"JPEG decode failed: {exc}") from exc


_CODECS = {CODEC_JPEG: JpegCodec(), CODEC_PNG: PngCodec()}


def get_codec(codec: Union[int, str]):
    if isinstance(codec, str):
        if codec.lower() not in CODEC_NAMES:
            raise ValueError(f"unsupported payload codec {codec!r}; choose jpeg or png")
        codec = CODEC_NAMES[codec.lower()]
    try:
        return _CODECS[codec]
    except KeyError:
        raise ValueError(f"unsupported payload codec id {codec!r}") from None


def png_size(img: np.ndarray) -> int:
    return len(PngCodec().encode(img))


# -- container ------------------------------------------------------------------

@dataclass(frozen=True)
class CompressedContainer:
    orig_width: int
    orig_height: int
    channels: int
    factor: int
    payload_codec: int
    payload: bytes
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    def serialize(self) -> bytes:
        return serialize(self)

    @classmethod
    def parse(cls, raw: bytes) -> "CompressedContainer":
        return parse(raw)


def serialize(c: CompressedContainer) -> bytes:
    header = _HEADER.pack(MAGIC, c.version, c.orig_width, c.orig_height, c.channels, c.factor,
                          c.payload_codec, len(c.payload))
    crc = zlib.crc32(c.payload, zlib.crc32(header))
    return header + _CRC.pack(crc) + bytes(c.payload)


def parse(raw: bytes) -> CompressedContainer:
    raw = bytes(raw)
    if len(raw) < len(MAGIC):
        raise TruncatedContainerError(f"container truncated: {len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad container magic {raw[:4]!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncatedContainerError(f"container header truncated: {len(raw)} of {HEADER_SIZE} bytes")
    magic, version, width, height, channels, factor, codec, length = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    if len(raw) - HEADER_SIZE != length:
        raise LengthMismatchError(f"payload length field says {length} bytes, found {len(raw) - HEADER_SIZE}")
    (crc,) = _CRC.unpack_from(raw, _HEADER.size)
    if zlib.crc32(raw[HEADER_SIZE:], zlib.crc32(raw[:_HEADER.size])) != crc:
        raise ChecksumError("container checksum mismatch")
    if width < 1 or height < 1 or channels not in (1, 3) or factor < 1 or codec not in _CODECS:
        raise InvalidHeaderError(
            f"invalid header values (width={width}, height={height}, channels={channels}, "
            f"factor={factor}, codec={codec})")
    return CompressedContainer(width, height, channels, factor, codec, raw[HEADER_SIZE:], version)


def write_container(path: PathLike, c: CompressedContainer) -> None:
    Path(path).write_bytes(serialize(c))


def read_container(path: PathLike) -> CompressedContainer:
    return parse(Path(path).read_bytes())


# -- pipeline -------------------------------------------------------------------

def compress(img: np.ndarray, r: int = 4, quality: int = 75,
             payload_codec: Union[int, str] = CODEC_JPEG) -> CompressedContainer:
    """Bicubic-downsample by ``r`` and encode the low-resolution image."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"compress expects an HxW, HxWx1 or HxWx3 image, got shape {np.shape(img)}")
    if r not in (2, 4, 8):
        raise ValueError(f"downsampling factor must be 2, 4 or 8, got {r}")
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    codec = get_codec(payload_codec)
    h, w, c = arr.shape
    lr = bicubic_downsample(arr, r)
    payload = codec.encode(lr, quality)
    return CompressedContainer(w, h, c, r, codec.codec_id, payload)


def decode_payload(c: CompressedContainer) -> np.ndarray:
    lr = get_codec(c.payload_codec).decode(c.payload)
    if lr.shape[2] != c.channels:
        raise CodecError(f"payload has {lr.shape[2]} channels, header says {c.channels}")
    return lr


def decompress(c: CompressedContainer, upsampler: str = "lanczos", model=None) -> np.ndarray:
    """Decode the payload and upsample back to the original dimensions.

    ``model`` (a :class:`~rlsrgan.model.Generator` or a checkpoint path) is
    required exactly when ``upsampler == "model"``.
    """
    if upsampler not in UPSAMPLERS:
        raise ConfigurationError(f"unknown upsampler {upsampler!r}; choose from {', '.join(UPSAMPLERS)}")
    if upsampler == "model" and model is None:
        raise ConfigurationError("the model upsampler needs a model checkpoint")
    if upsampler != "model" and model is not None:
        raise ConfigurationError(f"a model was supplied but the upsampler is {upsampler!r}")
    lr = decode_payload(c)
    lh, lw = lr.shape[:2]
    if upsampler == "model":
        from .model import Generator, load_generator, super_resolve

        gen = model if isinstance(model, Generator) else load_generator(model)
        if gen.r != c.factor:
            raise ConfigurationError(f"model upscales by {gen.r} but the container was downsampled by {c.factor}")
        if gen.channels != c.channels:
            raise ConfigurationError(f"model expects {gen.channels} channels, container has {c.channels}")
        hr = super_resolve(gen, lr)
    else:
        hr = resample(lr, lh * c.factor, lw * c.factor, upsampler)
    # crop away any reflection padding added before downsampling
    return np.ascontiguousarray(hr[:c.orig_height, :c.orig_width])
