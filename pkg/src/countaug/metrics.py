"""Counting metrics, the blob-count oracle, and hyperparameter sweeps.

MAE and RMSE are the standard counting-accuracy metrics.  ``blob_count``
counts 4-connected components whose hue sits far from the dominant
background hue; on images produced by the mock backend it recovers the
number of rendered disks exactly, which turns "the generated image
respects its density conditioning" into a checkable desk-scale property.

Sweeps run an arbitrary evaluator over one hyperparameter axis and emit
CSV rows in input order; a failing evaluator marks its row ``failed`` and
the sweep continues.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

SWEEP_AXES = ("tc", "pc", "M", "p0")

CSV_FIELDS = ("axis", "value", "split", "mae", "rmse", "n", "status")

# Circular hue distance (in turns) beyond which a pixel counts as foreground.
HUE_THRESHOLD = 60.0 / 360.0
MIN_BLOB_PIXELS = 4

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _check_pair(predicted, truth):
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} vs {len(truth)}")
    if len(predicted) == 0:
        raise ValueError("empty prediction list")


def mae(predicted, truth) -> float:
    """Mean absolute error between two equal-length count vectors."""
    _check_pair(predicted, truth)
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    return float(np.mean(np.abs(p - t)))


def rmse(predicted, truth) -> float:
    """Root mean squared error between two equal-length count vectors."""
    _check_pair(predicted, truth)
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    return float(math.sqrt(np.mean((p - t) ** 2)))


def trimmed_errors(predicted, truth, drop_top_k: int):
    """Drop the k largest absolute errors; for outlier-robust reporting.

    A couple of extreme images can dominate the averages, so reports can
    optionally exclude the top-k absolute errors.  Returns the surviving
    (predicted, truth) pair.
    """
    _check_pair(predicted, truth)
    if drop_top_k <= 0:
        return list(predicted), list(truth)
    if drop_top_k >= len(predicted):
        raise ValueError("cannot trim every sample")
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    keep = np.argsort(-np.abs(p - t), kind="stable")[drop_top_k:]
    keep.sort()
    return p[keep].tolist(), t[keep].tolist()


def _hue(pixels: np.ndarray) -> np.ndarray:
    """Vectorised RGB -> hue in [0, 1); hue is 0 for grey pixels."""
    rgb = pixels.astype(np.float64) / 255.0
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    hue = np.zeros(mx.shape, dtype=np.float64)
    safe = delta > 0

    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    idx = safe & (mx == r)
    hue[idx] = ((g - b)[idx] / delta[idx]) % 6.0
    idx = safe & (mx == g) & (mx != r)
    hue[idx] = (b - r)[idx] / delta[idx] + 2.0
    idx = safe & (mx == b) & (mx != r) & (mx != g)
    hue[idx] = (r - g)[idx] / delta[idx] + 4.0
    return hue / 6.0


def blob_count(pixels: np.ndarray, hue_threshold: float = HUE_THRESHOLD, min_pixels: int = MIN_BLOB_PIXELS) -> int:
    """Count hue-contrasting 4-connected components of >= ``min_pixels``.

    The dominant background hue is the peak of a 64-bin hue histogram;
    pixels whose circular hue distance from it exceeds ``hue_threshold``
    (in turns) form the foreground mask.
    """
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB array, got shape {pixels.shape}")
    hue = _hue(pixels)
    hist, edges = np.histogram(hue.ravel(), bins=64, range=(0.0, 1.0))
    dominant = (edges[int(np.argmax(hist))] + edges[int(np.argmax(hist)) + 1]) / 2.0

    dist = np.abs(hue - dominant)
    dist = np.minimum(dist, 1.0 - dist)
    mask = dist > hue_threshold

    labels, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    if n == 0:
        return 0
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    return int(np.count_nonzero(sizes >= min_pixels))


@dataclass
class EvalResult:
    """One evaluation: split, the two metrics, sample count, config."""

    split: str
    mae: float
    rmse: float
    n: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if not 0.0 <= self.mae <= self.rmse:
            raise ValueError(f"need 0 <= mae <= rmse, got mae={self.mae} rmse={self.rmse}")


def evaluate_counts(predicted, truth, split: str, config: dict | None = None, drop_top_k: int = 0) -> EvalResult:
    p, t = trimmed_errors(predicted, truth, drop_top_k)
    return EvalResult(split=split, mae=mae(p, t), rmse=rmse(p, t), n=len(p), config=dict(config or {}))


@dataclass
class SweepRow:
    axis: str
    value: float
    split: str
    mae: float | None
    rmse: float | None
    n: int | None
    status: str


def run_sweep(axis: str, values, fixed_config: dict, evaluator, workers: int = 1) -> list[SweepRow]:
    """Evaluate ``fixed_config`` with ``axis`` set to each value in turn.

    ``evaluator`` maps a full config dict to an :class:`EvalResult`.  Rows
    come back in input order regardless of ``workers``; evaluator failures
    become ``failed`` rows instead of aborting the sweep.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}, expected one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ValueError("empty sweep value list")

    def one(value):
        config = dict(fixed_config)
        config[axis] = value
        try:
            result = evaluator(config)
            return SweepRow(axis, value, result.split, result.mae, result.rmse, result.n, "ok")
        except Exception:
            return SweepRow(axis, value, "", None, None, None, "failed")

    if workers <= 1:
        return [one(v) for v in values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, values))


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(
            {
                "axis": row.axis,
                "value": repr(float(row.value)),
                "split": row.split,
                "mae": "" if row.mae is None else repr(float(row.mae)),
                "rmse": "" if row.rmse is None else repr(float(row.rmse)),
                "n": "" if row.n is None else int(row.n),
                "status": row.status,
            }
        )
    return buf.getvalue()


def sweep_from_csv(text: str) -> list[SweepRow]:
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        rows.append(
            SweepRow(
                axis=rec["axis"],
                value=float(rec["value"]),
                split=rec["split"],
                mae=float(rec["mae"]) if rec["mae"] else None,
                rmse=float(rec["rmse"]) if rec["rmse"] else None,
                n=int(rec["n"]) if rec["n"] else None,
                status=rec["status"],
            )
        )
    return rows


def write_sweep_csv(rows, path):
    Path(path).write_text(sweep_to_csv(rows))
