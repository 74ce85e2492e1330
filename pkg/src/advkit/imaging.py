"""PNG export of image grids.

The writer emits minimal spec-compliant PNGs (8-bit grayscale or RGB,
filter 0 scanlines, one IDAT) through zlib at a pinned compression
level, so identical pixel data always yields identical file bytes — the
evaluation pipeline's determinism contract extends to its figures.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ShapeError

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6  # pinned: byte-identical output for identical pixels


def to_bytes(images):
    """Map [0,1] floats onto 0..255 with round-half-up (0.5 -> 128)."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ShapeError("pixel values must lie in [0,1] before byte conversion")
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def _chunk(tag, payload):
    raw = tag + payload
    return struct.pack(">I", len(payload)) + raw + struct.pack(">I", zlib.crc32(raw))


def write_png(path, pixels):
    """Write uint8 pixels shaped (H, W) / (H, W, 1) as grayscale or (H, W, 3) as RGB."""
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        raise ShapeError(f"write_png expects uint8, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        color_type = 0
    elif arr.ndim == 3 and arr.shape[2] == 3:
        color_type = 2
    else:
        raise ShapeError(f"unsupported pixel shape {arr.shape}")
    height, width = arr.shape[:2]
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    rows = arr.reshape(height, -1)
    scanlines = b"".join(b"\x00" + rows[y].tobytes() for y in range(height))
    idat = zlib.compress(scanlines, _ZLIB_LEVEL)
    with open(path, "wb") as fh:
        fh.write(_PNG_SIGNATURE)
        fh.write(_chunk(b"IHDR", ihdr))
        fh.write(_chunk(b"IDAT", idat))
        fh.write(_chunk(b"IEND", b""))
    return path


def compose_grid(rows):
    """Tile rows of equal-shaped [0,1] images into one uint8 canvas.

    ``rows`` is a list of image lists; row r, column c of the output grid
    is ``rows[r][c]``.  Ragged rows are left-aligned and padded with
    black cells.
    """
    if not rows or not any(len(r) for r in rows):
        raise ShapeError("grid needs at least one image")
    first = np.asarray(rows[0][0])
    h, w = first.shape[0], first.shape[1]
    channels = first.shape[2] if first.ndim == 3 else 1
    cols = max(len(r) for r in rows)
    canvas = np.zeros((len(rows) * h, cols * w, channels), dtype=np.uint8)
    for r, row in enumerate(rows):
        for c, image in enumerate(row):
            arr = np.asarray(image)
            if arr.ndim == 2:
                arr = arr[:, :, np.newaxis]
            if arr.shape != (h, w, channels):
                raise ShapeError(
                    f"grid cell ({r},{c}) has shape {arr.shape}, "
                    f"expected {(h, w, channels)}"
                )
            canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = to_bytes(arr)
    return canvas if channels == 3 else canvas[:, :, 0]


def export_grid(rows, path):
    """Render rows of same-shaped [0,1] images as one PNG tile grid."""
    return write_png(path, compose_grid(rows))
