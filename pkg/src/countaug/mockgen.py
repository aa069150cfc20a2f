"""Deterministic mock backend: countable disks instead of diffusion.

The mock renders a flat background whose hue is a hash of the caption and
stamps one filled disk (radius 4 px) at each object location - either the
request's ``points`` hint or, failing that, peaks extracted from the
density conditioning.  Disk hue is the background hue rotated 180 degrees,
so disks always separate cleanly from the background no matter the
caption.  A small seeded per-pixel noise (amplitude <= 8/255) adds texture
without ever moving a blob.

This gives the pipeline a desk-scale, fully checkable stand-in: the blob
count of the output equals the mass of the conditioning density, and
swapping captions recolours the scene without touching object locations.
Identical requests produce byte-identical PNGs.
"""

from __future__ import annotations

import colorsys
import hashlib
import io
import logging

import numpy as np

from .density import extract_peaks
from .protocol import GenerationRequest, GenerationResponse, decode_request_density

log = logging.getLogger(__name__)

MOCK_BACKEND_ID = "mock-disk-v1"

DISK_RADIUS = 4
NOISE_AMPLITUDE = 8
PEAK_MIN_HEIGHT = 0.01
PEAK_MIN_SEPARATION = 5.0

_BG_SAT, _BG_VAL = 0.55, 0.78
_FG_SAT, _FG_VAL = 0.65, 0.85


def caption_hue(caption: str) -> float:
    """Stable hue in [0, 1) derived from the caption text."""
    digest = hashlib.blake2b(caption.encode("utf-8"), digest_size=8, person=b"cg.hue").digest()
    return int.from_bytes(digest, "little") / float(1 << 64)


def _hsv_u8(h: float, s: float, v: float) -> np.ndarray:
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return np.array([round(r * 255), round(g * 255), round(b * 255)], dtype=np.uint8)


def render_scene(width: int, height: int, caption: str, centers, seed: int) -> np.ndarray:
    """The mock's pixel model, exposed for tests: background + disks + noise."""
    hue = caption_hue(caption)
    background = _hsv_u8(hue, _BG_SAT, _BG_VAL)
    foreground = _hsv_u8(hue + 0.5, _FG_SAT, _FG_VAL)

    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = background

    yy, xx = np.mgrid[0:height, 0:width]
    for cx, cy in centers:
        mask = (xx - round(cx)) ** 2 + (yy - round(cy)) ** 2 <= DISK_RADIUS**2
        img[mask] = foreground

    rng = np.random.default_rng(seed)
    noise = rng.integers(-NOISE_AMPLITUDE, NOISE_AMPLITUDE + 1, size=img.shape, dtype=np.int16)
    return np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)


def mock_render(request: GenerationRequest, backend_id: str = MOCK_BACKEND_ID) -> GenerationResponse:
    """Serve one request deterministically.

    Raises :class:`~countaug.errors.ProtocolError` when the density payload
    is undecodable, mirroring what a real backend must reject.
    """
    import base64

    from PIL import Image

    # Sampling knobs are meaningless for disk rendering; echoed so logs of
    # mock and real runs stay comparable.
    log.debug(
        "mock render: %dx%d guidance=%s steps=%s seed=%d",
        request.width,
        request.height,
        request.guidance_scale,
        request.steps,
        request.seed,
    )
    dmap = decode_request_density(request)
    if request.points is not None:
        centers = request.points
    else:
        centers = extract_peaks(dmap, PEAK_MIN_HEIGHT, PEAK_MIN_SEPARATION)

    pixels = render_scene(request.width, request.height, request.caption, centers, request.seed)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return GenerationResponse(
        image=base64.b64encode(buf.getvalue()).decode("ascii"),
        backend_id=backend_id,
        seed_echo=request.seed,
    )
