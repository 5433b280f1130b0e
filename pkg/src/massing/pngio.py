"""PNG input/output for rasters and masks.

Reading accepts any decodable PNG (via Pillow, converted to 8-bit grayscale).
Writing uses a small canonical encoder: 8-bit grayscale, filter 0 on every
scanline, and an uncompressed (stored-block) zlib stream. Output bytes depend
only on the pixels, never on the codec version, which keeps debug artifacts
and golden fixtures byte-stable.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .raster import BinaryMask, GrayRaster

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _deflate_stored(data: bytes) -> bytes:
    """zlib stream using stored (uncompressed) deflate blocks of <= 65535 bytes."""
    out = bytearray(b"\x78\x01")
    pos = 0
    total = len(data)
    while True:
        chunk = data[pos : pos + 65535]
        pos += len(chunk)
        final = pos >= total
        out.append(0x01 if final else 0x00)
        out += struct.pack("<HH", len(chunk), len(chunk) ^ 0xFFFF)
        out += chunk
        if final:
            break
    out += struct.pack(">I", zlib.adler32(data) & 0xFFFFFFFF)
    return bytes(out)


def _chunk(kind: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + kind
        + payload
        + struct.pack(">I", zlib.crc32(kind + payload) & 0xFFFFFFFF)
    )


def encode_png_gray(pixels: np.ndarray) -> bytes:
    """Encode an (H, W) uint8 array as canonical grayscale PNG bytes."""
    arr = np.asarray(pixels, dtype=np.uint8)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected 2D pixel array, got shape {arr.shape}")
    h, w = arr.shape
    raw = np.zeros((h, w + 1), dtype=np.uint8)
    raw[:, 1:] = arr  # leading 0 per row = filter type None
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return (
        _PNG_SIGNATURE
        + _chunk(b"IHDR", ihdr)
        + _chunk(b"IDAT", _deflate_stored(raw.tobytes()))
        + _chunk(b"IEND", b"")
    )


def write_gray(path: str | Path, raster: GrayRaster) -> None:
    Path(path).write_bytes(encode_png_gray(raster.data))


def write_mask(path: str | Path, mask: BinaryMask) -> None:
    """Masks are stored as 0/255 grayscale PNGs."""
    Path(path).write_bytes(encode_png_gray(np.where(mask.data, 255, 0).astype(np.uint8)))


def read_gray(path: str | Path) -> GrayRaster:
    with Image.open(path) as img:
        return GrayRaster(np.asarray(img.convert("L"), dtype=np.uint8))


def read_mask(path: str | Path) -> BinaryMask:
    """Any pixel above 127 counts as footprint."""
    with Image.open(path) as img:
        return BinaryMask(np.asarray(img.convert("L"), dtype=np.uint8) > 127)


def decode_gray(data: bytes) -> GrayRaster:
    import io

    with Image.open(io.BytesIO(data)) as img:
        return GrayRaster(np.asarray(img.convert("L"), dtype=np.uint8))


def decode_mask(data: bytes) -> BinaryMask:
    import io

    with Image.open(io.BytesIO(data)) as img:
        return BinaryMask(np.asarray(img.convert("L"), dtype=np.uint8) > 127)
