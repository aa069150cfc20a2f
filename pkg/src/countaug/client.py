"""HTTP client that executes an augmentation plan against a backend.

Each planned item becomes one POST /generate carrying the source image's
density map as conditioning.  Transport errors, timeouts and 5xx answers
are transient and retried with exponential backoff; a 400 or a protocol
violation (wrong image dimensions, wrong seed echo) is fatal for the item
and stops the run.  Finished images land in a directory store laid out as

    <out>/<image_id>/<aug_index>.png
    <out>/<image_id>/<aug_index>.meta.json

with the metadata recording the planned item plus the backend id that
produced the pixels.
"""

from __future__ import annotations

import base64
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import httpx
from PIL import Image

from .density import decode_dmap
from .errors import ProtocolError, StoreError
from .planning import AugmentationPlan, PlannedItem
from .protocol import GenerationRequest, GenerationResponse, decode_response_image

log = logging.getLogger(__name__)

DEFAULT_CONCURRENCY = 4
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff for transient failures.

    Attempt n (0-based) sleeps ``backoff_base * factor**n`` seconds before
    retrying, capped at ``cap``.
    """

    max_attempts: int = 3
    backoff_base: float = 0.25
    factor: float = 2.0
    cap: float = 4.0

    def delay(self, attempt: int) -> float:
        return min(self.backoff_base * self.factor**attempt, self.cap)


@dataclass
class GenerationOutcome:
    item: PlannedItem
    image_path: Path
    backend_id: str
    attempts: int


def build_request(item: PlannedItem, density_bytes: bytes, points: list | None = None) -> GenerationRequest:
    dmap = decode_dmap(density_bytes)
    return GenerationRequest(
        width=dmap.width,
        height=dmap.height,
        caption=item.caption_used,
        density=base64.b64encode(density_bytes).decode("ascii"),
        seed=item.seed,
        points=points,
    )


def _post_with_retry(client: httpx.Client, url: str, request: GenerationRequest, policy: RetryPolicy, sleep=time.sleep):
    """POST one request; returns (response, attempts). Raises ProtocolError."""
    last = None
    for attempt in range(policy.max_attempts):
        if attempt > 0:
            sleep(policy.delay(attempt - 1))
        try:
            resp = client.post(url, json=request.model_dump(mode="json"))
        except httpx.HTTPError as exc:
            last = f"transport error: {exc}"
            log.warning("generate attempt %d/%d failed: %s", attempt + 1, policy.max_attempts, last)
            continue
        if resp.status_code == 200:
            return resp, attempt + 1
        if 500 <= resp.status_code < 600:
            last = f"server error {resp.status_code}"
            log.warning("generate attempt %d/%d failed: %s", attempt + 1, policy.max_attempts, last)
            continue
        # 4xx means this request will never succeed; do not retry.
        raise ProtocolError(f"backend rejected request with status {resp.status_code}: {resp.text[:200]}")
    raise ProtocolError(f"giving up after {policy.max_attempts} attempts; last failure: {last}")


def store_paths(store_dir, item: PlannedItem) -> tuple[Path, Path]:
    base = Path(store_dir) / item.image_id
    return base / f"{item.aug_index}.png", base / f"{item.aug_index}.meta.json"


def write_store_entry(store_dir, item: PlannedItem, pixels, backend_id: str) -> Path:
    image_path, meta_path = store_paths(store_dir, item)
    image_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(image_path, format="PNG")
    meta = item.to_json_dict()
    meta["backend_id"] = backend_id
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1))
    return image_path


def read_store_meta(store_dir, image_id: str, aug_index: int) -> dict:
    meta_path = Path(store_dir) / image_id / f"{aug_index}.meta.json"
    if not meta_path.exists():
        raise StoreError(f"no stored augmentation for {image_id}/{aug_index}")
    return json.loads(meta_path.read_text())


def run_plan(
    plan: AugmentationPlan,
    endpoint: str,
    densities_dir,
    store_dir,
    concurrency: int = DEFAULT_CONCURRENCY,
    policy: RetryPolicy | None = None,
    points_lookup=None,
    timeout: float = DEFAULT_TIMEOUT,
    sleep=time.sleep,
) -> list[GenerationOutcome]:
    """Execute every planned item and populate the augmentation store.

    ``points_lookup`` optionally maps a source image id to its point list,
    passed to the backend as a hint alongside the density map.  Outcomes
    come back in plan order.  The first fatal item error propagates.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    policy = policy or RetryPolicy()
    densities_dir = Path(densities_dir)
    url = endpoint.rstrip("/") + "/generate"

    def one(item: PlannedItem) -> GenerationOutcome:
        density_path = densities_dir / item.density_ref
        if not density_path.exists():
            raise StoreError(f"missing density map {density_path} for {item.image_id}/{item.aug_index}")
        density_bytes = density_path.read_bytes()
        points = points_lookup(item.image_id) if points_lookup is not None else None
        request = build_request(item, density_bytes, points=points)
        resp, attempts = _post_with_retry(client, url, request, policy, sleep=sleep)
        try:
            response = GenerationResponse.model_validate(resp.json())
        except Exception as exc:
            raise ProtocolError(f"malformed backend response for {item.image_id}/{item.aug_index}: {exc}") from exc
        pixels = decode_response_image(request, response)
        image_path = write_store_entry(store_dir, item, pixels, response.backend_id)
        return GenerationOutcome(item=item, image_path=image_path, backend_id=response.backend_id, attempts=attempts)

    with httpx.Client(timeout=timeout) as client:
        if concurrency == 1:
            return [one(item) for item in plan.items]
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            return list(pool.map(one, plan.items))
