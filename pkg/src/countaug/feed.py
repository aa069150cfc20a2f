"""Per-epoch training manifests mixing real and augmented images.

For every (epoch, image) pair an independent seeded coin with success
probability p0 decides whether the trainer sees a generated variant; on
success a uniformly random augmentation index is drawn from the same
stream.  Density maps and exemplar boxes always come from the original
annotation (generated pixels carry no box labels), so entries flag
``boxes_may_mismatch`` whenever the variant was produced under a swapped
caption.

Manifests are JSONL: a header line with the epoch parameters and the hash
of the plan they were drawn from, then one entry per train image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from hashlib import blake2b
from pathlib import Path
from posixpath import join as path_join
import random

from .dataset import CountingDataset
from .errors import FormatError, StoreError
from .planning import KIND_DIVERSE, AugmentationPlan

REAL_IMAGE_TEMPLATE = "images/{image_id}.jpg"

_U64 = 1 << 64


def feed_seed(global_seed: int, epoch: int, image_id: str) -> int:
    """Independent 64-bit stream per (epoch, image) pair.

    blake2b-64 (personalisation cg.feed) over the global seed as u64 LE,
    the epoch as u64 LE, and the UTF-8 image id.
    """
    if not 0 <= global_seed < _U64:
        raise ValueError("global_seed must fit in 64 bits")
    if not 0 <= epoch < _U64:
        raise ValueError("epoch must fit in 64 bits")
    h = blake2b(digest_size=8, person=b"cg.feed")
    h.update(global_seed.to_bytes(8, "little"))
    h.update(epoch.to_bytes(8, "little"))
    h.update(image_id.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass
class ManifestEntry:
    epoch: int
    image_id: str
    source: dict
    image_path: str
    density_path: str
    exemplar_boxes: list
    caption_used: str
    boxes_may_mismatch: bool

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "image_id": self.image_id,
            "source": self.source,
            "image_path": self.image_path,
            "density_path": self.density_path,
            "exemplar_boxes": self.exemplar_boxes,
            "caption_used": self.caption_used,
            "boxes_may_mismatch": self.boxes_may_mismatch,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ManifestEntry":
        return cls(**obj)


@dataclass
class EpochManifest:
    epoch: int
    p0: float
    global_seed: int
    plan_hash: str
    entries: list = field(default_factory=list)

    @property
    def synthetic_fraction(self) -> float:
        if not self.entries:
            return 0.0
        synth = sum(1 for e in self.entries if e.source["type"] == "augmented")
        return synth / len(self.entries)


def draw_source(global_seed: int, epoch: int, image_id: str, p0: float, available: list) -> dict:
    """One coin flip plus, on success, one uniform augmentation pick.

    ``available`` lists the augmentation indices that exist for the image.
    Both draws come from the same seeded stream so the pair is a pure
    function of (global_seed, epoch, image_id).
    """
    rng = random.Random(feed_seed(global_seed, epoch, image_id))
    if available and rng.random() < p0:
        k = available[rng.randrange(len(available))]
        return {"type": "augmented", "aug_index": k}
    return {"type": "real"}


def epoch_manifest(
    dataset: CountingDataset,
    plan: AugmentationPlan,
    plan_digest: str,
    epoch: int,
    p0: float,
    store_dir=None,
    densities_root: str = "densities",
    image_template: str = REAL_IMAGE_TEMPLATE,
    require_store: bool = True,
) -> EpochManifest:
    """Resolve every train image to a real or augmented source for one epoch.

    With ``require_store`` the selected augmentation must exist on disk in
    ``store_dir``; a missing file is a hard error naming the offending
    item rather than a silent fallback to the real image, which would
    skew the real/synthetic balance.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"p0 must be in [0, 1], got {p0}")
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    by_image = plan.by_image()
    train_ids = dataset.split_ids("train")
    if p0 > 0.0 and not any(by_image.values()):
        raise ValueError("p0 > 0 requires a plan with at least one augmentation")

    manifest = EpochManifest(epoch=epoch, p0=p0, global_seed=plan.global_seed, plan_hash=plan_digest)
    for image_id in train_ids:
        record = dataset.records[image_id]
        items = by_image.get(image_id, [])
        available = [it.aug_index for it in items]
        source = draw_source(plan.global_seed, epoch, image_id, p0, available)

        if source["type"] == "augmented":
            item = items[available.index(source["aug_index"])]
            image_path = path_join("store", image_id, f"{item.aug_index}.png")
            if require_store:
                if store_dir is None:
                    raise ValueError("require_store needs a store_dir")
                stored = Path(store_dir) / image_id / f"{item.aug_index}.png"
                if not stored.exists():
                    raise StoreError(f"manifest references missing augmentation {image_id}/{item.aug_index}")
                image_path = str(stored)
            caption = item.caption_used
            mismatch = item.kind == KIND_DIVERSE
        else:
            image_path = image_template.format(image_id=image_id)
            caption = record.caption
            mismatch = False

        manifest.entries.append(
            ManifestEntry(
                epoch=epoch,
                image_id=image_id,
                source=source,
                image_path=image_path,
                density_path=path_join(densities_root, f"{image_id}.dmap"),
                exemplar_boxes=[box.as_list() for box in record.exemplar_boxes],
                caption_used=caption,
                boxes_may_mismatch=mismatch,
            )
        )
    return manifest


def manifest_to_jsonl(manifest: EpochManifest) -> str:
    header = {
        "epoch": manifest.epoch,
        "p_0": manifest.p0,
        "global_seed": manifest.global_seed,
        "plan_hash": manifest.plan_hash,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for entry in manifest.entries:
        lines.append(json.dumps(entry.to_json_dict(), sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def manifest_from_jsonl(text: str) -> EpochManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty manifest")
    try:
        header = json.loads(lines[0])
        manifest = EpochManifest(
            epoch=header["epoch"],
            p0=header["p_0"],
            global_seed=header["global_seed"],
            plan_hash=header["plan_hash"],
        )
        for ln in lines[1:]:
            manifest.entries.append(ManifestEntry.from_json_dict(json.loads(ln)))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad manifest: {exc}") from exc
    return manifest


def write_manifests(
    dataset: CountingDataset,
    plan: AugmentationPlan,
    plan_digest: str,
    epochs: int,
    p0: float,
    out_dir,
    **kwargs,
) -> list[Path]:
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for epoch in range(epochs):
        manifest = epoch_manifest(dataset, plan, plan_digest, epoch, p0, **kwargs)
        path = out_dir / f"epoch_{epoch:04d}.jsonl"
        path.write_text(manifest_to_jsonl(manifest))
        paths.append(path)
    return paths
