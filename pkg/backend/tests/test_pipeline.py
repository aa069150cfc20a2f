"""Request-to-pixels glue: dimensions, determinism, trace pass-through."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from densdiff.dmap import DMAP_MAGIC
from densdiff.pipeline import GenerationPipeline, _pad_up


def _density_bytes(width: int, height: int, peaks=((5, 5),)) -> bytes:
    values = np.zeros((height, width), dtype=np.float32)
    for x, y in peaks:
        values[min(y, height - 1), min(x, width - 1)] = 1.0
    return DMAP_MAGIC + struct.pack("<II", width, height) + values.tobytes()


def _generate(pipeline, width, height, **overrides):
    args = dict(
        width=width,
        height=height,
        caption="a photo of pebbles on sand",
        density_bytes=_density_bytes(width, height),
        guidance_scale=2.0,
        steps=3,
        seed=7,
    )
    args.update(overrides)
    return pipeline.generate(**args)


class TestPadUp:
    def test_values(self):
        assert _pad_up(32, 8) == 32
        assert _pad_up(33, 8) == 40
        assert _pad_up(1, 8) == 8


class TestGenerate:
    @pytest.mark.parametrize("width,height", [(32, 32), (21, 13), (8, 40), (7, 7)])
    def test_exact_output_dimensions(self, tiny_model, width, height):
        pipeline = GenerationPipeline(tiny_model)
        pixels, _ = _generate(pipeline, width, height)
        assert pixels.shape == (height, width, 3)
        assert pixels.dtype == np.uint8

    def test_seeded_determinism(self, tiny_model):
        pipeline = GenerationPipeline(tiny_model)
        a, _ = _generate(pipeline, 24, 24, seed=99)
        b, _ = _generate(pipeline, 24, 24, seed=99)
        assert np.array_equal(a, b)

    def test_caption_changes_pixels(self, tiny_model):
        pipeline = GenerationPipeline(tiny_model)
        a, _ = _generate(pipeline, 24, 24, caption="red berries on a plate")
        b, _ = _generate(pipeline, 24, 24, caption="blue marbles on felt")
        assert not np.array_equal(a, b)

    def test_trace_reports_request_values(self, tiny_model):
        pipeline = GenerationPipeline(tiny_model)
        _, trace = _generate(pipeline, 16, 16, guidance_scale=4.5, steps=5, seed=31)
        assert trace.guidance_scale == 4.5
        assert trace.steps == 5
        assert trace.seed == 31
        assert trace.model_calls == 10

    def test_u64_seed_accepted(self, tiny_model):
        pipeline = GenerationPipeline(tiny_model)
        pixels, trace = _generate(pipeline, 16, 16, seed=(1 << 64) - 1)
        assert pixels.shape == (16, 16, 3)
        assert trace.seed == (1 << 64) - 1
