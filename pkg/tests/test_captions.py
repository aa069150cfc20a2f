import numpy as np
import pytest

from countaug.captions import (
    EMBED_DIM,
    CaptionEmbedding,
    build_compatible_sets,
    cosine_similarity,
    embed_caption,
    embed_corpus,
    load_embeddings,
    load_pairs,
    pairs_from_json,
    pairs_to_json,
    resolve_embeddings,
    save_embeddings,
    save_pairs,
)
from countaug.errors import FormatError

HERD_A = "a herd of cows in a field"
HERD_B = "a herd of bisons in a field"
NECKLACE = "a pearl necklace"


def brute_force_sets(embeddings, tc):
    ids = [e.caption_id for e in embeddings]
    out = {i: [] for i in ids}
    for i, a in enumerate(embeddings):
        scored = []
        for j, b in enumerate(embeddings):
            if i == j:
                continue
            s = cosine_similarity(a, b)
            if (tc == 0.0) or (s > tc):
                scored.append((-s, ids[j]))
        scored.sort()
        out[ids[i]] = [cid for _, cid in scored]
    return out


class TestEmbed:
    def test_determinism(self):
        a = embed_caption("cows")
        b = embed_caption("cows")
        assert np.array_equal(a.vector, b.vector)

    def test_unit_norm(self):
        for text in (HERD_A, NECKLACE, "x7 42 q"):
            v = embed_caption(text).vector
            assert abs(np.linalg.norm(v) - 1.0) <= 1e-6

    def test_related_captions_embed_closer_than_unrelated(self):
        a, b, c = (embed_caption(t) for t in (HERD_A, HERD_B, NECKLACE))
        assert cosine_similarity(a, b) > cosine_similarity(a, c)

    def test_empty_caption_rejected(self):
        with pytest.raises(ValueError):
            embed_caption("")

    def test_caption_without_tokens_rejected(self):
        with pytest.raises(ValueError):
            embed_caption("!!! ---")

    def test_corpus_sorted_by_id(self):
        embs = embed_corpus({"b": "two dogs", "a": "one cat"})
        assert [e.caption_id for e in embs] == ["a", "b"]


class TestCosine:
    def test_self_similarity(self):
        v = embed_caption(HERD_A)
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-6)

    def test_constructed_orthogonal(self):
        e1 = np.zeros(8)
        e1[0] = 1.0
        e2 = np.zeros(8)
        e2[3] = 1.0
        a = CaptionEmbedding(vector=e1, caption_id="a")
        b = CaptionEmbedding(vector=e2, caption_id="b")
        assert abs(cosine_similarity(a, b)) <= 1e-9

    def test_symmetric_on_random_pairs(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            a = CaptionEmbedding(vector=rng.normal(size=32), caption_id="a")
            b = CaptionEmbedding(vector=rng.normal(size=32), caption_id="b")
            assert cosine_similarity(a, b) == cosine_similarity(b, a)

    def test_dimension_mismatch(self):
        a = CaptionEmbedding(vector=np.ones(8), caption_id="a")
        b = CaptionEmbedding(vector=np.ones(16), caption_id="b")
        with pytest.raises(ValueError):
            cosine_similarity(a, b)


class TestCompatibleSets:
    def test_zero_threshold_disables_filter(self):
        captions = {f"c{i}": t for i, t in enumerate([HERD_A, HERD_B, NECKLACE, "seven red chairs", "a pile of bricks"])}
        compat = build_compatible_sets(embed_corpus(captions), 0.0)
        assert all(len(v) == 4 for v in compat.candidates.values())

    def test_threshold_above_supremum_empties_all(self):
        embs = embed_corpus({"a": HERD_A, "b": HERD_B, "c": NECKLACE})
        sims = [cosine_similarity(x, y) for i, x in enumerate(embs) for y in embs[i + 1 :]]
        just_above = min(max(sims) + 1e-9, 1.0)
        compat = build_compatible_sets(embs, just_above)
        assert all(v == [] for v in compat.candidates.values())

    def test_matches_brute_force(self):
        texts = [HERD_A, HERD_B, NECKLACE, "three ships at sea", "a herd of goats in a field",
                 "a pearl bracelet", "rows of parked cars", "cars parked in rows",
                 "a basket of eggs", "eggs in a basket"]
        captions = {f"id{i:02d}": t for i, t in enumerate(texts)}
        embs = embed_corpus(captions)
        compat = build_compatible_sets(embs, 0.7)
        assert compat.candidates == brute_force_sets(embs, 0.7)

    def test_symmetry_and_self_exclusion(self, corpus):
        captions = {i: corpus.records[i].caption for i in corpus.split_ids("train")}
        compat = build_compatible_sets(embed_corpus(captions), 0.5)
        for i, cands in compat.candidates.items():
            assert i not in cands
            for j in cands:
                assert i in compat.candidates[j]

    def test_monotone_shrinkage(self, corpus):
        captions = {i: corpus.records[i].caption for i in corpus.split_ids("train")}
        embs = embed_corpus(captions)
        previous = None
        for tc in np.arange(0.1, 0.95, 0.1):
            current = build_compatible_sets(embs, float(tc)).candidates
            if previous is not None:
                for i in current:
                    assert set(current[i]) <= set(previous[i])
            previous = current

    def test_rejects_bad_threshold(self):
        embs = embed_corpus({"a": HERD_A})
        for tc in (-0.1, 1.1):
            with pytest.raises(ValueError):
                build_compatible_sets(embs, tc)

    def test_rejects_duplicate_ids(self):
        embs = [embed_caption(HERD_A, "same"), embed_caption(HERD_B, "same")]
        with pytest.raises(ValueError):
            build_compatible_sets(embs, 0.5)


class TestEmbeddingFile:
    def test_round_trip(self, tmp_path):
        embs = embed_corpus({"a": HERD_A, "b": HERD_B})
        path = tmp_path / "embs.bin"
        save_embeddings(embs, path)
        back = load_embeddings(path)
        assert [e.caption_id for e in back] == ["a", "b"]
        for orig, re in zip(embs, back):
            assert np.allclose(orig.vector, re.vector, atol=1e-7)

    def test_truncated_file_rejected(self, tmp_path):
        embs = embed_corpus({"a": HERD_A})
        path = tmp_path / "embs.bin"
        save_embeddings(embs, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        embs = embed_corpus({"a": HERD_A})
        path = tmp_path / "embs.bin"
        save_embeddings(embs, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_sidecar_takes_precedence(self, tmp_path):
        rng = np.random.default_rng(2)
        fake = []
        for cid in ("a", "b"):
            v = rng.normal(size=EMBED_DIM)
            fake.append(CaptionEmbedding(vector=v / np.linalg.norm(v), caption_id=cid))
        path = tmp_path / "side.bin"
        save_embeddings(fake, path)
        resolved = resolve_embeddings({"a": HERD_A, "b": HERD_B}, encoder=f"file:{path}")
        builtin = embed_corpus({"a": HERD_A, "b": HERD_B})
        assert not np.allclose(resolved[0].vector, builtin[0].vector)

    def test_sidecar_must_cover_all_ids(self, tmp_path):
        path = tmp_path / "side.bin"
        save_embeddings(embed_corpus({"a": HERD_A}), path)
        with pytest.raises(FormatError):
            resolve_embeddings({"a": HERD_A, "b": HERD_B}, encoder=f"file:{path}")

    def test_unknown_encoder_rejected(self):
        with pytest.raises(ValueError):
            resolve_embeddings({"a": HERD_A}, encoder="blip2")


class TestPairsFile:
    def test_round_trip(self, tmp_path, corpus):
        captions = {i: corpus.records[i].caption for i in corpus.split_ids("train")}
        compat = build_compatible_sets(embed_corpus(captions), 0.5)
        path = tmp_path / "pairs.json"
        save_pairs(compat, path)
        back = load_pairs(path, 0.5)
        assert back.candidates == compat.candidates
        assert back.threshold == 0.5

    def test_file_is_a_plain_id_map(self, tmp_path, corpus):
        import json

        captions = {i: corpus.records[i].caption for i in corpus.split_ids("train")}
        compat = build_compatible_sets(embed_corpus(captions), 0.5)
        obj = json.loads(pairs_to_json(compat))
        assert set(obj) == set(captions)
        assert all(isinstance(v, list) for v in obj.values())

    def test_rejects_asymmetric_pairs(self):
        with pytest.raises(FormatError):
            pairs_from_json('{"a": ["b"], "b": []}', 0.5)

    def test_rejects_self_candidate(self):
        with pytest.raises(FormatError):
            pairs_from_json('{"a": ["a"]}', 0.5)

    def test_rejects_non_object(self):
        with pytest.raises(FormatError):
            pairs_from_json("[1, 2]", 0.5)
