"""HTTP face of the backend.

Speaks the two-endpoint generation contract: ``POST /generate`` maps
JSON requests to sampled PNG images and ``GET /healthz`` reports
liveness.  Anything wrong with a request - invalid JSON, failed field
validation, undecodable or mismatched density - is a 400; a missing or
unloadable model is a 503 because the fault is on this side.

``GET /stats`` exposes what the sampler actually did on the most
recent request (guidance scale, step count, seed, model calls) so
operators can confirm requested hyperparameters reach the sampler.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import io
import os
import threading
from dataclasses import asdict

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .dmap import DmapError, decode_dmap
from .model import ControlUNet, ModelLoadError, load_model
from .pipeline import GenerationPipeline

BACKEND_ID = "densdiff-v1"

_U64_MAX = (1 << 64) - 1


class WireRequest(BaseModel):
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    caption: str
    density: str  # base64 DMAPv1 bytes
    guidance_scale: float = Field(default=2.0, gt=0)
    steps: int = Field(default=20, ge=1)
    seed: int = Field(ge=0, le=_U64_MAX)
    points: list[tuple[float, float]] | None = None  # advisory, unused here


class WireResponse(BaseModel):
    image: str
    backend_id: str
    seed_echo: int


def _png_b64(pixels) -> str:
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(
    weights: str | None = None,
    device: str = "cpu",
    model: ControlUNet | None = None,
) -> FastAPI:
    """Build the app; a model that fails to load leaves /generate at 503."""
    app = FastAPI(title="densdiff")
    state = {"pipeline": None, "load_error": None, "requests": 0, "last_trace": None}
    lock = threading.Lock()

    if model is None and weights is None:
        weights = os.environ.get("DENSDIFF_WEIGHTS")
    if model is None and weights is not None:
        try:
            model = load_model(weights, device=device)
        except ModelLoadError as exc:
            state["load_error"] = str(exc)
    if model is not None:
        state["pipeline"] = GenerationPipeline(model)

    @app.exception_handler(RequestValidationError)
    async def invalid_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "backend_id": BACKEND_ID,
            "model_loaded": state["pipeline"] is not None,
        }

    @app.get("/stats")
    def stats():
        trace = state["last_trace"]
        return {
            "backend_id": BACKEND_ID,
            "requests": state["requests"],
            "load_error": state["load_error"],
            "last_trace": asdict(trace) if trace is not None else None,
        }

    @app.post("/generate")
    def generate(req: WireRequest):
        pipeline = state["pipeline"]
        if pipeline is None:
            detail = state["load_error"] or "no model weights configured"
            return JSONResponse(status_code=503, content={"detail": detail})
        try:
            raw = base64.b64decode(req.density, validate=True)
        except (binascii.Error, ValueError) as exc:
            return JSONResponse(
                status_code=400, content={"detail": f"density is not valid base64: {exc}"}
            )
        try:
            density = decode_dmap(raw)
        except DmapError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        if density.shape != (req.height, req.width):
            return JSONResponse(
                status_code=400,
                content={
                    "detail": f"density is {density.shape[1]}x{density.shape[0]} "
                    f"but request says {req.width}x{req.height}"
                },
            )
        with lock:
            pixels, trace = pipeline.generate(
                width=req.width,
                height=req.height,
                caption=req.caption,
                density_bytes=raw,
                guidance_scale=req.guidance_scale,
                steps=req.steps,
                seed=req.seed,
            )
            state["requests"] += 1
            state["last_trace"] = trace
        return WireResponse(image=_png_b64(pixels), backend_id=BACKEND_ID, seed_echo=req.seed)

    return app


def main(argv: list[str] | None = None) -> None:
    import uvicorn

    parser = argparse.ArgumentParser(description="serve the generation backend")
    parser.add_argument(
        "--weights", default=os.environ.get("DENSDIFF_WEIGHTS"), help="weights file path"
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=9000)
    parser.add_argument("--device", default=os.environ.get("DENSDIFF_DEVICE", "cpu"))
    args = parser.parse_args(argv)

    app = create_app(weights=args.weights, device=args.device)
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
