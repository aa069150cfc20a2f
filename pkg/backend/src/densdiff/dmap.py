"""Density payload decoding and control-input rasterization.

The wire format carries the conditioning density as base64 DMAPv1 bytes:
an 8-byte magic, width and height as u32 little-endian, then
width*height float32 little-endian cells in row-major order.  The
decoder here is intentionally self-contained so the backend depends on
nothing but the published byte layout.
"""

from __future__ import annotations

import struct

import numpy as np

DMAP_MAGIC = b"DMAPv1\x00\x00"
MAX_CELLS = 64 * 1024 * 1024


class DmapError(ValueError):
    """The density payload does not follow the wire format."""


def decode_dmap(data: bytes) -> np.ndarray:
    """Parse DMAPv1 bytes into a float32 (height, width) array."""
    if len(data) < 16:
        raise DmapError(f"payload too short ({len(data)} bytes)")
    if data[:8] != DMAP_MAGIC:
        raise DmapError(f"bad magic {data[:8]!r}")
    width, height = struct.unpack("<II", data[8:16])
    if width == 0 or height == 0:
        raise DmapError(f"zero-area map {width}x{height}")
    if width * height > MAX_CELLS:
        raise DmapError(f"{width}x{height} exceeds {MAX_CELLS} cells")
    expected = 16 + 4 * width * height
    if len(data) != expected:
        raise DmapError(f"got {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=16)
    return values.reshape(height, width).copy()


def control_image(density: np.ndarray) -> np.ndarray:
    """Rasterize a density map to the (3, height, width) control input.

    Min-max scaled to [0, 1] and replicated across three channels; a
    constant map (an empty scene) becomes all zeros rather than
    dividing by a zero range.
    """
    density = np.asarray(density, dtype=np.float32)
    if density.ndim != 2:
        raise DmapError(f"density must be 2-d, got shape {density.shape}")
    lo = float(density.min())
    hi = float(density.max())
    if hi > lo:
        scaled = (density - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(density)
    return np.repeat(scaled[np.newaxis, :, :], 3, axis=0)
