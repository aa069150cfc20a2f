"""Caption embedding behaviour the sampler depends on."""

from __future__ import annotations

import torch

from densdiff.text import EMBED_DIM, embed_caption, null_embedding


class TestEmbedCaption:
    def test_deterministic(self):
        a = embed_caption("a photo of pebbles on sand")
        b = embed_caption("a photo of pebbles on sand")
        assert torch.equal(a, b)

    def test_shape_and_norm(self):
        vec = embed_caption("marbles on felt")
        assert vec.shape == (EMBED_DIM,)
        assert vec.dtype == torch.float32
        assert abs(float(vec.norm()) - 1.0) < 1e-6

    def test_captions_separate(self):
        assert not torch.equal(embed_caption("red berries"), embed_caption("blue marbles"))

    def test_word_order_matters(self):
        # bigram hashing distinguishes reorderings of the same words
        assert not torch.equal(embed_caption("red cat"), embed_caption("cat red"))

    def test_case_folded(self):
        assert torch.equal(embed_caption("Pebbles On Sand"), embed_caption("pebbles on sand"))

    def test_empty_caption_is_null(self):
        assert torch.equal(embed_caption(""), null_embedding())


class TestNullEmbedding:
    def test_all_zero(self):
        vec = null_embedding()
        assert vec.shape == (EMBED_DIM,)
        assert not vec.any()
