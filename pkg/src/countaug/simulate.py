"""Synthetic counting corpora with exactly known ground truth.

Builds small datasets whose object centres sit on a coarse grid, far
enough apart that density peaks never merge and rendered disks never
touch.  Useful for exercising the full pipeline (densities, plans,
generation, feeds, eval) at desk scale where every expected number is
computable by hand.
"""

from __future__ import annotations

import random

from .dataset import Box, CountingDataset, ImageRecord

DEFAULT_WIDTH = 128
DEFAULT_HEIGHT = 96
GRID_PITCH = 12
GRID_MARGIN = 6

# Small caption vocabulary with deliberate overlaps: captions sharing a
# noun embed close together, so compatibility sets are non-trivial at
# mid-range thresholds.
NOUNS = ("apples", "lemons", "pebbles", "bottles", "buttons")
SURFACES = ("a wooden table", "a market stall", "grey gravel", "a metal tray")


def grid_positions(width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> list:
    """All grid slots, row-major; neighbouring slots are GRID_PITCH apart."""
    xs = range(GRID_MARGIN, width - GRID_MARGIN + 1, GRID_PITCH)
    ys = range(GRID_MARGIN, height - GRID_MARGIN + 1, GRID_PITCH)
    return [(float(x), float(y)) for y in ys for x in xs]


def caption_for(index: int) -> str:
    noun = NOUNS[index % len(NOUNS)]
    surface = SURFACES[(index // len(NOUNS)) % len(SURFACES)]
    return f"a photo of {noun} on {surface}"


def make_record(image_id: str, count: int, seed: int, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> ImageRecord:
    slots = grid_positions(width, height)
    if count > len(slots):
        raise ValueError(f"count {count} exceeds {len(slots)} grid slots at {width}x{height}")
    rng = random.Random(seed)
    points = sorted(rng.sample(slots, count))
    boxes = []
    for px, py in points[: min(3, count)]:
        boxes.append(Box(px - 5.0, py - 5.0, px + 5.0, py + 5.0))
    return ImageRecord(
        image_id=image_id,
        width=width,
        height=height,
        points=points,
        exemplar_boxes=boxes,
        split="train",
    )


def make_corpus(n_images: int, seed: int = 0, min_count: int = 1, max_count: int = 50) -> CountingDataset:
    """n_images train records with counts cycling over [min_count, max_count]."""
    if n_images < 1:
        raise ValueError("need at least one image")
    if not 1 <= min_count <= max_count:
        raise ValueError(f"bad count range [{min_count}, {max_count}]")
    records = {}
    ids = []
    span = max_count - min_count + 1
    for i in range(n_images):
        image_id = f"sim_{i:04d}"
        count = min_count + (i % span)
        record = make_record(image_id, count, seed=seed * 1_000_003 + i)
        record.caption = caption_for(i)
        record.category = NOUNS[i % len(NOUNS)]
        records[image_id] = record
        ids.append(image_id)
    return CountingDataset(records=records, split_lists={"train": ids, "val": [], "test": []})
