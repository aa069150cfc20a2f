"""Layout-fidelity evaluation: does a generated image respect its density?

The mock backend draws one disk per conditioning point, so blob-counting
a generated image and comparing against the density mass gives a
quantitative desk-scale proxy for "generation respects the count".  Two
entry points:

* :func:`plan_fidelity` scores an already-populated augmentation store.
* :func:`make_mock_evaluator` builds the in-process evaluator used by
  hyperparameter sweeps: each config is re-planned and re-rendered with
  the mock backend, no files or sockets involved.
"""

from __future__ import annotations

import base64
from pathlib import Path

import numpy as np
from PIL import Image

from .captions import build_compatible_sets, embed_corpus
from .dataset import CountingDataset
from .density import DensityMap, decode_dmap, density_count, encode_dmap, render_density
from .errors import StoreError
from .feed import epoch_manifest
from .metrics import EvalResult, blob_count, evaluate_counts
from .mockgen import mock_render
from .planning import AugmentationPlan, PlannedItem, build_plan
from .protocol import GenerationRequest, decode_response_image


def _round_count(dmap: DensityMap) -> float:
    return float(round(density_count(dmap)))


def plan_fidelity(plan: AugmentationPlan, store_dir, densities_dir, limit: int | None = None) -> EvalResult:
    """Blob-count every stored augmentation against its conditioning mass."""
    items = plan.items[:limit] if limit else plan.items
    if not items:
        raise ValueError("plan has no items to evaluate")
    predicted, truth = [], []
    for item in items:
        png = Path(store_dir) / item.image_id / f"{item.aug_index}.png"
        if not png.exists():
            raise StoreError(f"missing stored augmentation {item.image_id}/{item.aug_index}")
        with Image.open(png) as img:
            pixels = np.asarray(img.convert("RGB"))
        dmap = decode_dmap((Path(densities_dir) / item.density_ref).read_bytes())
        predicted.append(float(blob_count(pixels)))
        truth.append(_round_count(dmap))
    return evaluate_counts(predicted, truth, split="train", config={"n_items": len(items)})


def _render_item(item: PlannedItem, dmap: DensityMap, density_b64: str, points) -> int:
    request = GenerationRequest(
        width=dmap.width,
        height=dmap.height,
        caption=item.caption_used,
        density=density_b64,
        seed=item.seed,
        points=points,
    )
    response = mock_render(request)
    return blob_count(decode_response_image(request, response))


def make_mock_evaluator(dataset: CountingDataset, global_seed: int, limit: int | None = None, sigma: float = 2.0):
    """Evaluator for run_sweep: config {tc, pc, M, p0} -> EvalResult.

    Re-plans under the config, renders each planned generation with the
    in-process mock backend, and scores blob counts against the density
    mass.  The p0 knob restricts evaluation to the augmentations that the
    epoch-0 manifest actually selects, so its rows reflect what a trainer
    would see; p0=0 selects nothing and its row fails by construction.

    Embeddings and density maps are computed once and shared across
    configs.
    """
    train_ids = dataset.split_ids("train")
    captions = {i: dataset.records[i].caption for i in train_ids}
    embeddings = embed_corpus(captions)

    densities = {}
    for image_id in train_ids:
        record = dataset.records[image_id]
        dmap = render_density(record.points, record.width, record.height, sigma=sigma)
        densities[image_id] = (dmap, base64.b64encode(encode_dmap(dmap)).decode("ascii"))

    def evaluator(config: dict) -> EvalResult:
        compat = build_compatible_sets(embeddings, float(config["tc"]))
        plan = build_plan(dataset, compat, m=int(config["M"]), pc=float(config["pc"]), global_seed=global_seed)

        p0 = float(config["p0"])
        manifest = epoch_manifest(dataset, plan, plan_digest="", epoch=0, p0=p0, require_store=False)
        by_image = plan.by_image()
        chosen = []
        for entry in manifest.entries:
            if entry.source["type"] != "augmented":
                continue
            for item in by_image[entry.image_id]:
                if item.aug_index == entry.source["aug_index"]:
                    chosen.append(item)
                    break
        if not chosen:
            raise ValueError(f"p0={p0} selected no augmentations to evaluate")
        if limit:
            chosen = chosen[:limit]

        predicted, truth = [], []
        for item in chosen:
            dmap, b64 = densities[item.image_id]
            points = list(dataset.records[item.image_id].points)
            predicted.append(float(_render_item(item, dmap, b64, points)))
            truth.append(_round_count(dmap))
        return evaluate_counts(predicted, truth, split="train", config=dict(config))

    return evaluator
