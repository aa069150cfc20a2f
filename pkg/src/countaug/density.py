"""Ground-truth density maps: rendering, counting, codec and peak recovery.

A density map is a non-negative H x W field whose total mass equals the
number of annotated objects.  Each object contributes one isotropic
Gaussian kernel centred on its point annotation.  Kernels are truncated at
4 sigma for cost and then renormalised individually, so the in-image mass
of every kernel is exactly 1 even when the point hugs a border.  That makes
"sum of the map == point count" a hard invariant instead of a statistical
one.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import FormatError

DMAP_MAGIC = b"DMAPv1\x00\x00"
DEFAULT_SIGMA = 2.0

# Refuse to allocate absurd grids when decoding untrusted bytes.
MAX_CELLS = 1 << 26

# Absolute mass tolerance per annotated point.
MASS_ATOL_PER_POINT = 1e-6


@dataclass
class DensityMap:
    """A row-major float32 grid plus the point count it was rendered from.

    ``source_point_count`` is None for maps that were decoded from bytes
    (the on-disk format does not carry it) or otherwise constructed without
    a generating point set.
    """

    width: int
    height: int
    values: np.ndarray
    source_point_count: int | None = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.height}x{self.width}"
            )

    def validate(self):
        """Check the non-negativity and mass-conservation invariants."""
        if self.width <= 0 or self.height <= 0:
            raise ValueError("zero-area density map")
        if not np.isfinite(self.values).all():
            raise ValueError("density map contains non-finite values")
        if (self.values < 0).any():
            raise ValueError("density map contains negative values")
        if self.source_point_count is not None:
            count = self.source_point_count
            err = abs(density_count(self) - count)
            if err > MASS_ATOL_PER_POINT * max(1, count):
                raise ValueError(
                    f"density mass off by {err:.3e} for {count} points"
                )

    def __eq__(self, other):
        if not isinstance(other, DensityMap):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.source_point_count == other.source_point_count
            and np.array_equal(self.values, other.values)
        )


def render_density(points, width: int, height: int, sigma: float = DEFAULT_SIGMA) -> DensityMap:
    """Render one renormalised Gaussian kernel per point onto a fresh grid.

    Points are (x, y) with 0 <= x < width and 0 <= y < height; callers are
    expected to have clamped them already.  Accumulation happens in float64
    in a fixed order, so output is bit-identical for identical input, and
    the final grid is stored as float32.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if width <= 0 or height <= 0:
        raise ValueError(f"zero-area grid: {width}x{height}")

    pts = [(float(x), float(y)) for x, y in points]
    acc = np.zeros((height, width), dtype=np.float64)
    radius = 4.0 * sigma
    inv_two_var = 1.0 / (2.0 * sigma * sigma)

    for px, py in pts:
        if not (0.0 <= px < width and 0.0 <= py < height):
            raise ValueError(f"point ({px}, {py}) outside {width}x{height} grid")
        x0 = max(0, int(math.ceil(px - radius)))
        x1 = min(width - 1, int(math.floor(px + radius)))
        y0 = max(0, int(math.ceil(py - radius)))
        y1 = min(height - 1, int(math.floor(py + radius)))
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        wx = np.exp(-((xs - px) ** 2) * inv_two_var)
        wy = np.exp(-((ys - py) ** 2) * inv_two_var)
        kernel = np.outer(wy, wx)
        kernel /= kernel.sum()
        acc[y0 : y1 + 1, x0 : x1 + 1] += kernel

    return DensityMap(
        width=width,
        height=height,
        values=acc.astype(np.float32),
        source_point_count=len(pts),
    )


def density_count(dmap: DensityMap) -> float:
    """Total mass of the map, i.e. the (real-valued) object count."""
    return float(np.sum(dmap.values, dtype=np.float64))


def encode_dmap(dmap: DensityMap) -> bytes:
    """Serialise to the DMAPv1 wire/disk format.

    Layout: 8-byte magic ``DMAPv1\\0\\0``, width and height as u32 LE, then
    width*height float32 LE cells in row-major order.
    """
    header = DMAP_MAGIC + struct.pack("<II", dmap.width, dmap.height)
    return header + dmap.values.astype("<f4", copy=False).tobytes(order="C")


def decode_dmap(data: bytes) -> DensityMap:
    """Parse DMAPv1 bytes; the inverse of :func:`encode_dmap`, bit-exact."""
    if len(data) < 16:
        raise FormatError(f"DMAPv1 payload too short ({len(data)} bytes)")
    if data[:8] != DMAP_MAGIC:
        raise FormatError(f"bad DMAPv1 magic: {data[:8]!r}")
    width, height = struct.unpack("<II", data[8:16])
    if width == 0 or height == 0:
        raise FormatError(f"zero-area density map: {width}x{height}")
    cells = width * height
    if cells > MAX_CELLS:
        raise FormatError(f"dimension overflow: {width}x{height} exceeds {MAX_CELLS} cells")
    expected = 16 + 4 * cells
    if len(data) != expected:
        raise FormatError(
            f"truncated or oversized payload: got {len(data)} bytes, expected {expected}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(height, width).copy()
    return DensityMap(width=width, height=height, values=values)


def write_dmap(dmap: DensityMap, path):
    Path(path).write_bytes(encode_dmap(dmap))


def read_dmap(path) -> DensityMap:
    return decode_dmap(Path(path).read_bytes())


def extract_peaks(dmap: DensityMap, min_height: float, min_separation: float):
    """Local maxima of the map, greedily de-duplicated.

    Candidates are cells >= ``min_height`` that are maximal in their 3x3
    neighbourhood.  They are visited in descending height (ties broken by
    row-major position) and accepted unless an already-accepted peak lies
    strictly closer than ``min_separation`` pixels (Euclidean).

    Returns (x, y) cell coordinates as floats.
    """
    if min_height <= 0:
        raise ValueError("min_height must be positive")
    if min_separation < 1:
        raise ValueError("min_separation must be >= 1")

    arr = dmap.values
    if arr.size == 0 or float(arr.max()) < min_height:
        return []

    neighbourhood_max = ndimage.maximum_filter(arr, size=3, mode="constant", cval=-np.inf)
    mask = (arr >= min_height) & (arr >= neighbourhood_max)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return []

    heights = arr[ys, xs]
    order = np.lexsort((xs, ys, -heights))
    min_sep_sq = float(min_separation) ** 2

    accepted_x: list[float] = []
    accepted_y: list[float] = []
    for i in order:
        cx, cy = float(xs[i]), float(ys[i])
        ok = True
        for ax, ay in zip(accepted_x, accepted_y):
            if (ax - cx) ** 2 + (ay - cy) ** 2 < min_sep_sq:
                ok = False
                break
        if ok:
            accepted_x.append(cx)
            accepted_y.append(cy)
    return list(zip(accepted_x, accepted_y))


def density_to_png(dmap: DensityMap, path):
    """Export a min-max scaled 16-bit grayscale PNG for visualisation.

    Lossy by design; never read back into the pipeline.
    """
    from PIL import Image

    arr = dmap.values.astype(np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        scaled = (arr - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(arr)
    img16 = (scaled * 65535.0).round().astype(np.uint16)
    Image.fromarray(img16).save(str(path))
