"""Wire contract for dual-conditioned image generation backends.

Any backend - the in-process mock or a real diffusion service - speaks the
same two endpoints:

* ``POST /generate``: JSON :class:`GenerationRequest` in, JSON
  :class:`GenerationResponse` out.  Malformed requests get HTTP 400.
* ``GET /healthz``: ``{"status": "ok", "backend_id": ...}``.

Binary payloads (the conditioning density, the produced image) travel as
base64 strings.  The density is DMAPv1 bytes; the image is an 8-bit RGB
PNG whose dimensions must match the request exactly.

``run_conformance`` packages the backend validation suite so the same
checks drive the mock and any external implementation.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from .density import DensityMap, decode_dmap, encode_dmap, render_density
from .errors import FormatError, ProtocolError

DEFAULT_GUIDANCE_SCALE = 2.0
DEFAULT_STEPS = 20

_U64_MAX = (1 << 64) - 1


class GenerationRequest(BaseModel):
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    caption: str
    density: str  # base64 DMAPv1 bytes
    guidance_scale: float = Field(default=DEFAULT_GUIDANCE_SCALE, gt=0)
    steps: int = Field(default=DEFAULT_STEPS, ge=1)
    seed: int = Field(ge=0, le=_U64_MAX)
    points: list[tuple[float, float]] | None = None


class GenerationResponse(BaseModel):
    image: str  # base64 PNG, 8-bit RGB, request dimensions
    backend_id: str
    seed_echo: int = Field(ge=0, le=_U64_MAX)


def density_to_b64(dmap: DensityMap) -> str:
    return base64.b64encode(encode_dmap(dmap)).decode("ascii")


def decode_request_density(request: GenerationRequest) -> DensityMap:
    """Decode and cross-check the request's density payload.

    Raises :class:`ProtocolError` when the payload is not valid base64,
    not valid DMAPv1, or disagrees with the request dimensions.
    """
    try:
        raw = base64.b64decode(request.density, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"density is not valid base64: {exc}") from exc
    try:
        dmap = decode_dmap(raw)
    except FormatError as exc:
        raise ProtocolError(f"density does not decode: {exc}") from exc
    if (dmap.width, dmap.height) != (request.width, request.height):
        raise ProtocolError(
            f"density is {dmap.width}x{dmap.height} but request says "
            f"{request.width}x{request.height}"
        )
    return dmap


def decode_response_image(request: GenerationRequest, response: GenerationResponse) -> np.ndarray:
    """Validate a response against its request; returns the RGB pixel array.

    Checks: base64 decodes, PNG parses, mode is 8-bit RGB, dimensions match
    the request, and the seed echo matches.
    """
    from PIL import Image

    try:
        raw = base64.b64decode(response.image, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"image is not valid base64: {exc}") from exc
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:  # PIL raises a zoo of types here
        raise ProtocolError(f"image does not decode as PNG: {exc}") from exc
    if img.format != "PNG":
        raise ProtocolError(f"image format is {img.format}, expected PNG")
    if img.mode != "RGB":
        raise ProtocolError(f"image mode is {img.mode}, expected RGB")
    if img.size != (request.width, request.height):
        raise ProtocolError(
            f"backend returned {img.size[0]}x{img.size[1]} for a "
            f"{request.width}x{request.height} request"
        )
    if response.seed_echo != request.seed:
        raise ProtocolError(
            f"seed echo {response.seed_echo} does not match request seed {request.seed}"
        )
    return np.asarray(img)


def golden_request(seed: int = 7) -> GenerationRequest:
    """A small, fully deterministic request used by the conformance suite."""
    points = [(8.0, 8.0), (24.0, 22.0)]
    dmap = render_density(points, width=32, height=32, sigma=2.0)
    return GenerationRequest(
        width=32,
        height=32,
        caption="a cluster of round pebbles on sand",
        density=density_to_b64(dmap),
        seed=seed,
        points=points,
    )


@dataclass
class ConformanceResult:
    check: str
    ok: bool
    detail: str = ""


def run_conformance(base_url: str, client) -> list[ConformanceResult]:
    """Run the backend validation suite against ``base_url``.

    ``client`` is an ``httpx.Client``-compatible object (anything with
    ``get``/``post`` returning responses with ``status_code``/``json()``).
    Checks: health endpoint, golden request round trip, malformed-request
    handling (400), and response dimensions.
    """
    results = []
    base = base_url.rstrip("/")

    def record(check, ok, detail=""):
        results.append(ConformanceResult(check=check, ok=bool(ok), detail=detail))

    try:
        resp = client.get(f"{base}/healthz")
        body = resp.json()
        record(
            "health",
            resp.status_code == 200 and body.get("status") == "ok" and "backend_id" in body,
            f"status={resp.status_code} body={body}",
        )
    except Exception as exc:
        record("health", False, repr(exc))

    request = golden_request()
    response = None
    try:
        resp = client.post(f"{base}/generate", json=request.model_dump())
        ok = resp.status_code == 200
        detail = f"status={resp.status_code}"
        if ok:
            response = GenerationResponse.model_validate(resp.json())
        record("golden_request", ok, detail)
    except Exception as exc:
        record("golden_request", False, repr(exc))

    try:
        if response is None:
            record("dimensions", False, "no golden response to check")
        else:
            decode_response_image(request, response)
            record("dimensions", True, f"{request.width}x{request.height}")
    except ProtocolError as exc:
        record("dimensions", False, str(exc))

    try:
        bad = request.model_dump()
        bad["density"] = bad["density"][: len(bad["density"]) // 2]  # truncated payload
        resp = client.post(f"{base}/generate", json=bad)
        record("malformed_400", resp.status_code == 400, f"status={resp.status_code}")
    except Exception as exc:
        record("malformed_400", False, repr(exc))

    return results
