"""Raster validation and file I/O.

A raster is a 2-D ``float32`` numpy array of finite, non-negative amplitudes.
Two on-disk encodings are supported:

* 8-bit grayscale PNG, mapped one-to-one onto amplitudes 0..255;
* raw ``LDNR``: magic ``b"LDNR"``, u32 version (1), u32 height, u32 width,
  then ``height * width`` little-endian f32 values in row-major order.

All header integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, IntegrityError, ShapeError, TruncatedError, VersionError

LDNR_MAGIC = b"LDNR"
LDNR_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def as_raster(image, *, name: str = "raster") -> np.ndarray:
    """Return ``image`` as a contiguous float32 raster, validating its contents."""
    arr = np.ascontiguousarray(image, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite pixels")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative amplitudes")
    return arr


def encode_ldnr(matrix: np.ndarray) -> bytes:
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ShapeError(f"LDNR stores 2-D data, got shape {arr.shape}")
    h, w = arr.shape
    return _HEADER.pack(LDNR_MAGIC, LDNR_VERSION, h, w) + arr.astype("<f4", copy=False).tobytes(order="C")


def decode_ldnr(blob: bytes) -> np.ndarray:
    if len(blob) < 4 or blob[:4] != LDNR_MAGIC:
        raise BadMagicError("not an LDNR file (bad magic)")
    if len(blob) < _HEADER.size:
        raise TruncatedError("LDNR header truncated")
    _, version, h, w = _HEADER.unpack_from(blob)
    if version != LDNR_VERSION:
        raise VersionError(f"unsupported LDNR version {version}")
    expected = h * w * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedError(f"LDNR payload has {len(payload)} bytes, header promises {expected}")
    if len(payload) > expected:
        raise IntegrityError(f"LDNR payload has {len(payload) - expected} trailing bytes")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)


def save_ldnr(path, matrix: np.ndarray) -> None:
    Path(path).write_bytes(encode_ldnr(matrix))


def load_ldnr(path) -> np.ndarray:
    return decode_ldnr(Path(path).read_bytes())


def read_raster(path) -> tuple[np.ndarray, str]:
    """Load a raster; returns ``(pixels, kind)`` with kind ``"ldnr"`` or ``"png"``."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] == LDNR_MAGIC:
        return as_raster(decode_ldnr(blob), name=str(path)), "ldnr"
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("L"), dtype=np.float32)
    except (UnidentifiedImageError, OSError):
        raise FormatError(f"{path}: neither LDNR nor a readable image") from None
    return as_raster(pixels, name=str(path)), "png"


def write_raster(path, pixels: np.ndarray) -> None:
    """Write ``.png`` as clipped/rounded 8-bit grayscale, anything else as LDNR."""
    path = Path(path)
    arr = as_raster(pixels)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(np.clip(np.rint(arr), 0, 255).astype(np.uint8), mode="L").save(path)
    else:
        save_ldnr(path, arr)


def default_peak(reference: np.ndarray, kind: str) -> float:
    """PSNR peak: 255 for 8-bit sources, the reference maximum for raw float rasters."""
    if kind == "png":
        return 255.0
    peak = float(np.max(reference))
    return peak if peak > 0 else 1.0
