"""Ingest point-annotated counting datasets into the canonical model.

Two annotation schemas are understood:

* ``fsc147`` - a JSON object keyed by image id where each value carries a
  ``points`` list and ``box_examples_coordinates``, a list of 4-corner
  exemplar polygons (reduced here to axis-aligned min/max boxes).
* ``generic`` - the same shape with ``points`` and ``boxes`` where each box
  is already ``[x1, y1, x2, y2]``.

Image dimensions come from a separate JSON file (``id -> [w, h]`` or
``id -> {"width": w, "height": h, "category": ...}``) because annotation
files typically do not carry them.

Out-of-bounds points are clamped to the boundary rather than dropped:
dropping would silently change the ground-truth count, clamping preserves
it.  Clamps are tallied in ``LoadStats``.  Boxes that violate their
invariants reject the whole record.

Loading is single-threaded and deterministic; treat the resulting dataset
as immutable afterwards and it is safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AnnotationError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

CAPTION_FALLBACK = "a photo of {category}"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixels with x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_list()}")

    @classmethod
    def from_corners(cls, corners) -> "Box":
        """Reduce a 4-corner polygon [[x, y], ...] to its bounding box."""
        xs = [float(c[0]) for c in corners]
        ys = [float(c[1]) for c in corners]
        return cls(min(xs), min(ys), max(xs), max(ys))

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass
class ImageRecord:
    """One annotated image: dimensions, object centres, exemplars, caption."""

    image_id: str
    width: int
    height: int
    points: list = field(default_factory=list)
    exemplar_boxes: list = field(default_factory=list)
    split: str = ""
    caption: str = ""
    category: str = ""

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class CountingDataset:
    """Validated records plus per-split ordered id lists."""

    records: dict
    split_lists: dict

    def split_ids(self, split: str):
        return self.split_lists.get(split, [])

    def __eq__(self, other):
        if not isinstance(other, CountingDataset):
            return NotImplemented
        return self.records == other.records and self.split_lists == other.split_lists


@dataclass
class LoadStats:
    """Warning tallies accumulated while loading."""

    clamped_points: int = 0
    ignored_captions: int = 0


def _check_image_id(image_id: str):
    if not image_id:
        raise AnnotationError("empty image id")
    if "/" in image_id or "\\" in image_id or image_id in (".", ".."):
        raise AnnotationError(f"image id {image_id!r} contains path separators")


def _validate_box(box: Box, image_id: str, width: int, height: int):
    if box.x1 < 0 or box.y1 < 0 or box.x2 > width or box.y2 > height:
        raise AnnotationError(
            f"record {image_id!r}: box {box.as_list()} outside {width}x{height} image"
        )


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise AnnotationError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON in {path}: {exc}") from exc


def _parse_dims(raw, image_id: str):
    if isinstance(raw, dict):
        try:
            width, height = int(raw["width"]), int(raw["height"])
        except KeyError as exc:
            raise AnnotationError(f"dims entry for {image_id!r} missing {exc}") from exc
        category = str(raw.get("category", ""))
    else:
        width, height = int(raw[0]), int(raw[1])
        category = ""
    if width <= 0 or height <= 0:
        raise AnnotationError(f"record {image_id!r}: non-positive dimensions {width}x{height}")
    return width, height, category


def load_annotations(
    annotation_file,
    image_dims_source,
    schema: str = "fsc147",
    stats: LoadStats | None = None,
) -> dict:
    """Load and validate annotations, returning ``image_id -> ImageRecord``.

    ``stats`` (optional) accumulates the clamp warning tally.
    """
    if schema not in ("fsc147", "generic"):
        raise AnnotationError(f"unknown annotation schema {schema!r}")
    annotations = _read_json(annotation_file)
    if not isinstance(annotations, dict):
        raise AnnotationError(f"{annotation_file}: top level must be a JSON object")
    dims = _read_json(image_dims_source)

    records = {}
    for image_id in annotations:
        _check_image_id(image_id)
        entry = annotations[image_id]
        if image_id not in dims:
            raise AnnotationError(f"record {image_id!r}: no dimensions entry")
        width, height, category = _parse_dims(dims[image_id], image_id)
        if schema == "generic" and isinstance(entry, dict) and entry.get("category"):
            category = str(entry["category"])

        points = []
        for raw in entry.get("points", []):
            x, y = float(raw[0]), float(raw[1])
            cx = min(max(x, 0.0), math.nextafter(float(width), 0.0))
            cy = min(max(y, 0.0), math.nextafter(float(height), 0.0))
            if cx != x or cy != y:
                if stats is not None:
                    stats.clamped_points += 1
                logger.warning(
                    "record %r: point (%g, %g) clamped to (%g, %g)", image_id, x, y, cx, cy
                )
            points.append((cx, cy))

        try:
            if schema == "fsc147":
                raw_boxes = entry.get("box_examples_coordinates", [])
                boxes = [Box.from_corners(corners) for corners in raw_boxes]
            else:
                raw_boxes = entry.get("boxes", [])
                boxes = [Box(float(b[0]), float(b[1]), float(b[2]), float(b[3])) for b in raw_boxes]
        except ValueError as exc:
            raise AnnotationError(f"record {image_id!r}: {exc}") from exc
        for box in boxes:
            _validate_box(box, image_id, width, height)
        if not boxes:
            raise AnnotationError(f"record {image_id!r}: no exemplar boxes")

        records[image_id] = ImageRecord(
            image_id=image_id,
            width=width,
            height=height,
            points=points,
            exemplar_boxes=boxes,
            category=category,
        )
    return records


def load_splits(split_file, records: dict) -> CountingDataset:
    """Wire records into a dataset, validating split invariants.

    Rejects: unknown split names, ids listed twice, listed ids with no
    record, train records with zero points, and (when category labels are
    present on all splits involved) train categories leaking into val/test.
    """
    split_map = _read_json(split_file)
    if not isinstance(split_map, dict):
        raise AnnotationError(f"{split_file}: top level must be a JSON object")

    split_lists = {s: [] for s in SPLITS}
    seen = {}
    for split, ids in split_map.items():
        if split not in SPLITS:
            raise AnnotationError(f"unknown split name {split!r}")
        for image_id in ids:
            if image_id in seen:
                raise AnnotationError(
                    f"id {image_id!r} listed in both {seen[image_id]!r} and {split!r}"
                )
            if image_id not in records:
                raise AnnotationError(f"id {image_id!r} in split {split!r} has no record")
            seen[image_id] = split
            split_lists[split].append(image_id)

    for image_id in split_lists["train"]:
        if not records[image_id].points:
            raise AnnotationError(f"train record {image_id!r} has zero points")

    for image_id, split in seen.items():
        records[image_id].split = split

    _check_open_set(records, split_lists)
    return CountingDataset(records=records, split_lists=split_lists)


def _check_open_set(records, split_lists):
    """Categories of val/test must be disjoint from train when labelled."""

    def categories(split):
        cats = {records[i].category for i in split_lists[split]}
        cats.discard("")
        return cats

    train_cats = categories("train")
    if not train_cats:
        return
    for split in ("val", "test"):
        overlap = train_cats & categories(split)
        if overlap:
            raise AnnotationError(
                f"categories {sorted(overlap)} appear in both train and {split}"
            )


def attach_captions(dataset: CountingDataset, caption_file, stats: LoadStats | None = None) -> CountingDataset:
    """Attach captions from a JSON ``id -> caption`` map.

    Unknown ids are ignored with a warning tally.  Train records that end
    up without a caption fall back to ``"a photo of {category}"`` when a
    category label exists, and are rejected otherwise.
    """
    captions = _read_json(caption_file)
    if not isinstance(captions, dict):
        raise AnnotationError(f"{caption_file}: top level must be a JSON object")

    for image_id, caption in captions.items():
        record = dataset.records.get(image_id)
        if record is None:
            if stats is not None:
                stats.ignored_captions += 1
            logger.warning("caption for unknown id %r ignored", image_id)
            continue
        record.caption = str(caption)

    for image_id in dataset.split_lists["train"]:
        record = dataset.records[image_id]
        if record.caption:
            continue
        if record.category:
            record.caption = CAPTION_FALLBACK.format(category=record.category)
        else:
            raise AnnotationError(
                f"train record {image_id!r} has no caption and no category to fall back on"
            )
    return dataset


def dataset_to_dict(dataset: CountingDataset) -> dict:
    """Canonical JSON-ready form; inverse of :func:`dataset_from_dict`."""
    records = {}
    for image_id in sorted(dataset.records):
        r = dataset.records[image_id]
        records[image_id] = {
            "width": r.width,
            "height": r.height,
            "points": [[x, y] for x, y in r.points],
            "exemplar_boxes": [b.as_list() for b in r.exemplar_boxes],
            "split": r.split,
            "caption": r.caption,
            "category": r.category,
        }
    return {"records": records, "split_lists": dataset.split_lists}


def dataset_from_dict(payload: dict) -> CountingDataset:
    records = {}
    for image_id, r in payload["records"].items():
        records[image_id] = ImageRecord(
            image_id=image_id,
            width=int(r["width"]),
            height=int(r["height"]),
            points=[(float(p[0]), float(p[1])) for p in r["points"]],
            exemplar_boxes=[Box(*(float(v) for v in b)) for b in r["exemplar_boxes"]],
            split=r.get("split", ""),
            caption=r.get("caption", ""),
            category=r.get("category", ""),
        )
    split_lists = {s: list(payload["split_lists"].get(s, [])) for s in SPLITS}
    return CountingDataset(records=records, split_lists=split_lists)


def save_dataset(dataset: CountingDataset, path):
    Path(path).write_text(json.dumps(dataset_to_dict(dataset), sort_keys=True, indent=1))


def load_dataset(path) -> CountingDataset:
    return dataset_from_dict(_read_json(path))
