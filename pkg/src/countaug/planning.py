"""Deterministic augmentation schedule: M jobs per train image.

Each train image receives exactly M planned generation jobs.  A fixed
fraction ``round_half_up(pc * M)`` of them are "diverse" (caption swapped
in from a compatible image); the rest are "baseline" (the image's own
caption).  The density reference and the exemplar boxes always come from
the source image regardless of kind - they stay valid ground truth because
generation is conditioned on that same density.

Everything is a pure function of (dataset order, compatibility sets, M,
pc, global_seed): plans serialise to byte-identical files across runs and
platforms.  Images with no compatible partner degrade to all-baseline and
are recorded in the plan's ``downgraded`` list.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .captions import CompatibilitySets
from .dataset import Box, CountingDataset
from .errors import FormatError

KIND_BASELINE = "baseline"
KIND_DIVERSE = "diverse"

_U64 = 1 << 64


def _mix64(person: bytes, *chunks: bytes) -> int:
    h = hashlib.blake2b(digest_size=8, person=person)
    for chunk in chunks:
        h.update(chunk)
    return int.from_bytes(h.digest(), "little")


def item_seed(global_seed: int, image_id: str, aug_index: int) -> int:
    """64-bit per-item seed.

    Defined as blake2b-64 (personalisation ``cg.item``) over
    ``global_seed`` as u64 LE, the UTF-8 image id, and ``aug_index`` as
    u64 LE.  Distinct (image_id, aug_index) pairs collide with negligible
    probability.
    """
    if not 0 <= global_seed < _U64:
        raise ValueError("global_seed must fit in 64 bits")
    if not 0 <= aug_index < _U64:
        raise ValueError("aug_index must fit in 64 bits")
    return _mix64(
        b"cg.item",
        struct.pack("<Q", global_seed),
        image_id.encode("utf-8"),
        struct.pack("<Q", aug_index),
    )


def _slot_seed(global_seed: int, image_id: str) -> int:
    """Seed for the per-image shuffle that picks which slots are diverse."""
    return _mix64(b"cg.slot", struct.pack("<Q", global_seed), image_id.encode("utf-8"))


def round_half_up(x: float) -> int:
    """round() with half-up semantics (2.5 -> 3), so plans are portable."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PlannedItem:
    """One generation job: which density, which caption, which seed."""

    image_id: str
    aug_index: int
    kind: str
    caption_used: str
    caption_source_id: str
    density_ref: str
    exemplar_boxes: tuple
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "aug_index": self.aug_index,
            "kind": self.kind,
            "caption_used": self.caption_used,
            "caption_source_id": self.caption_source_id,
            "density_ref": self.density_ref,
            "exemplar_boxes": [b.as_list() for b in self.exemplar_boxes],
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PlannedItem":
        return cls(
            image_id=d["image_id"],
            aug_index=int(d["aug_index"]),
            kind=d["kind"],
            caption_used=d["caption_used"],
            caption_source_id=d["caption_source_id"],
            density_ref=d["density_ref"],
            exemplar_boxes=tuple(Box(*(float(v) for v in b)) for b in d["exemplar_boxes"]),
            seed=int(d["seed"]),
        )


@dataclass
class AugmentationPlan:
    global_seed: int
    m: int
    pc: float
    tc: float
    items: list = field(default_factory=list)
    downgraded: list = field(default_factory=list)

    def by_image(self) -> dict:
        grouped: dict = {}
        for item in self.items:
            grouped.setdefault(item.image_id, []).append(item)
        return grouped


def default_density_ref(image_id: str) -> str:
    return f"{image_id}.dmap"


def build_plan(
    dataset: CountingDataset,
    compat: CompatibilitySets,
    m: int,
    pc: float,
    global_seed: int,
    density_ref=default_density_ref,
) -> AugmentationPlan:
    """Plan M generation jobs for every train image.

    For each image, ``round_half_up(pc * m)`` slots become diverse,
    chosen by a seeded shuffle of 0..m-1; each diverse slot draws its
    caption source uniformly from the image's candidate list using the
    item's own seed.  Images with an empty candidate list fall back to
    all-baseline and are flagged.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not 0.0 <= pc <= 1.0:
        raise ValueError(f"pc must be in [0, 1], got {pc}")
    if not 0 <= global_seed < _U64:
        raise ValueError("global_seed must fit in 64 bits")

    plan = AugmentationPlan(global_seed=global_seed, m=m, pc=pc, tc=compat.threshold)
    want_diverse = round_half_up(pc * m)

    for image_id in dataset.split_ids("train"):
        record = dataset.records[image_id]
        cands = compat.candidates.get(image_id, [])
        k = want_diverse if cands else 0
        if want_diverse > 0 and not cands:
            plan.downgraded.append(image_id)

        slot_rng = random.Random(_slot_seed(global_seed, image_id))
        slots = list(range(m))
        slot_rng.shuffle(slots)
        diverse_slots = set(slots[:k])

        ref = density_ref(image_id)
        boxes = tuple(record.exemplar_boxes)
        for j in range(m):
            seed = item_seed(global_seed, image_id, j)
            if j in diverse_slots:
                source_id = cands[random.Random(seed).randrange(len(cands))]
                item = PlannedItem(
                    image_id=image_id,
                    aug_index=j,
                    kind=KIND_DIVERSE,
                    caption_used=dataset.records[source_id].caption,
                    caption_source_id=source_id,
                    density_ref=ref,
                    exemplar_boxes=boxes,
                    seed=seed,
                )
            else:
                item = PlannedItem(
                    image_id=image_id,
                    aug_index=j,
                    kind=KIND_BASELINE,
                    caption_used=record.caption,
                    caption_source_id=image_id,
                    density_ref=ref,
                    exemplar_boxes=boxes,
                    seed=seed,
                )
            plan.items.append(item)
    return plan


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def plan_to_jsonl(plan: AugmentationPlan) -> str:
    """Serialise: one header line, then one item per line, canonical JSON."""
    header = {
        "global_seed": plan.global_seed,
        "M": plan.m,
        "p_c": plan.pc,
        "t_c": plan.tc,
        "tool_version": __version__,
        "downgraded": sorted(plan.downgraded),
    }
    lines = [_dumps(header)]
    lines.extend(_dumps(item.to_json_dict()) for item in plan.items)
    return "\n".join(lines) + "\n"


def plan_from_jsonl(text: str) -> AugmentationPlan:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty plan file")
    try:
        header = json.loads(lines[0])
        items = [PlannedItem.from_json_dict(json.loads(ln)) for ln in lines[1:]]
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"malformed plan file: {exc}") from exc
    return AugmentationPlan(
        global_seed=int(header["global_seed"]),
        m=int(header["M"]),
        pc=float(header["p_c"]),
        tc=float(header["t_c"]),
        items=items,
        downgraded=list(header.get("downgraded", [])),
    )


def write_plan(plan: AugmentationPlan, path):
    Path(path).write_text(plan_to_jsonl(plan))


def read_plan(path) -> AugmentationPlan:
    return plan_from_jsonl(Path(path).read_text())


def plan_hash(path) -> str:
    """sha256 of the serialised plan file, hex-encoded."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
