"""Acceptance gate: the package's headline guarantees, one test each.

Every test wraps its body in :func:`criterion`, which prints a single
``[ACCEPTANCE] <name>: PASS`` or ``FAIL`` line so that ``pytest -s`` reads
as a checklist.  Tolerances and sample sizes are pinned here; relaxing
them is an interface change, not a test fix.
"""

import hashlib
import math
import random
import time
from collections import Counter
from contextlib import contextmanager

import numpy as np
import pytest
import scipy.stats
from PIL import Image

from countaug.captions import (
    CompatibilitySets,
    build_compatible_sets,
    cosine_similarity,
    embed_corpus,
    similarity_matrix,
)
from countaug.client import run_plan
from countaug.dataset import CountingDataset
from countaug.density import (
    DensityMap,
    decode_dmap,
    density_count,
    encode_dmap,
    render_density,
)
from countaug.feed import epoch_manifest
from countaug.fidelity import make_mock_evaluator, plan_fidelity
from countaug.metrics import mae, rmse, run_sweep, sweep_from_csv, sweep_to_csv
from countaug.mockgen import NOISE_AMPLITUDE
from countaug.planning import KIND_BASELINE, KIND_DIVERSE, build_plan, plan_to_jsonl, write_plan
from countaug.service.app import run_local_service
from countaug.simulate import make_corpus, make_record


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def test_mass_conservation():
    """1000 random point sets (sizes 0-500, border-hugging included):
    |density mass - count| <= 1e-6 * max(1, count), in under 30 s."""
    with criterion("mass_conservation"):
        rng = np.random.default_rng(95173)
        start = time.monotonic()
        for trial in range(1000):
            width = int(rng.integers(24, 161))
            height = int(rng.integers(24, 161))
            count = (0, 500)[trial] if trial < 2 else int(rng.integers(0, 501))
            xs = np.minimum(rng.uniform(0.0, width, size=count), math.nextafter(width, 0))
            ys = np.minimum(rng.uniform(0.0, height, size=count), math.nextafter(height, 0))
            if trial % 3 == 0 and count:
                xs[: count // 4] = 0.0
                ys[count // 4 : count // 2] = math.nextafter(float(height), 0)
            dmap = render_density(list(zip(xs.tolist(), ys.tolist())), width, height, sigma=2.0)
            assert abs(density_count(dmap) - count) <= 1e-6 * max(1, count)
        assert time.monotonic() - start < 30.0


def test_density_codec():
    """decode(encode(m)) is bit-exact for 100 random maps up to 512x512."""
    with criterion("density_codec"):
        rng = np.random.default_rng(40961)
        scales = np.float32([0.0, 1e-6, 1.0, 4096.0])
        for trial in range(100):
            if trial == 0:
                height, width = 1, 1
            elif trial == 1:
                height, width = 512, 512
            else:
                height = int(rng.integers(1, 513))
                width = int(rng.integers(1, 513))
            values = rng.random((height, width), dtype=np.float32) * scales[trial % len(scales)]
            dmap = DensityMap(width=width, height=height, values=values)
            out = decode_dmap(encode_dmap(dmap))
            assert out.values.dtype == np.float32
            assert out.values.shape == values.shape
            assert out.values.tobytes() == values.tobytes()


ADJECTIVES = ("red", "ripe", "dusty", "shiny", "small", "large", "pale", "dark", "spotted", "wet")
NOUNS = ("apples", "lemons", "pebbles", "bottles", "buttons")
SURFACES = ("a wooden table", "a market stall", "grey gravel", "a metal tray")


def _caption_corpus_200():
    texts = {}
    k = 0
    for adj in ADJECTIVES:
        for noun in NOUNS:
            for surface in SURFACES:
                texts[f"c{k:03d}"] = f"a photo of {adj} {noun} on {surface}"
                k += 1
    return texts


def test_similarity_contracts():
    """Self-similarity 1 +- 1e-6; exact symmetry on 1e5 random pairs;
    candidate sets equal a quadratic brute force at tc 0.3 and 0.7 on 200
    captions; sets only shrink as tc rises through 0.1..0.9."""
    with criterion("similarity_contracts"):
        texts = _caption_corpus_200()
        assert len(set(texts.values())) == 200
        embeddings = embed_corpus(texts)
        by_id = {e.caption_id: e for e in embeddings}

        for emb in embeddings:
            assert abs(cosine_similarity(emb, emb) - 1.0) <= 1e-6

        rng = random.Random(271)
        for _ in range(100_000):
            a = embeddings[rng.randrange(200)]
            b = embeddings[rng.randrange(200)]
            assert cosine_similarity(a, b) == cosine_similarity(b, a)

        # Brute force over the canonical pairwise values: one caption pair
        # here sits exactly on 0.7, where a recomputed cosine can land one
        # bit away and flip a strict comparison.
        ids, sims = similarity_matrix(embeddings)
        index = {caption_id: k for k, caption_id in enumerate(ids)}
        assert np.array_equal(sims, sims.T)
        for tc in (0.3, 0.7):
            compat = build_compatible_sets(embeddings, tc)
            for ia in ids:
                oracle = {
                    ib for ib in ids if ib != ia and sims[index[ia], index[ib]] > tc
                }
                assert set(compat.candidates[ia]) == oracle, (tc, ia)

        previous = None
        for tc in [round(0.1 * k, 1) for k in range(1, 10)]:
            compat = build_compatible_sets(embeddings, tc)
            if previous is not None:
                for ia in ids:
                    assert set(compat.candidates[ia]) <= set(previous[ia]), (tc, ia)
            previous = compat.candidates


def test_plan_exactness(tmp_path):
    """M=10, pc in {0, 0.5, 0.7, 1}: images with candidates get exactly
    round(pc*M) diverse items, every partner similarity beats tc, and a
    same-seed rebuild is byte-identical."""
    with criterion("plan_exactness"):
        dataset = make_corpus(24, seed=3, min_count=1, max_count=12)
        captions = {i: dataset.records[i].caption for i in dataset.split_ids("train")}
        embeddings = embed_corpus(captions)
        ids, sims = similarity_matrix(embeddings)
        index = {caption_id: k for k, caption_id in enumerate(ids)}
        tc = 0.5
        compat = build_compatible_sets(embeddings, tc)

        expected = {0.0: 0, 0.5: 5, 0.7: 7, 1.0: 10}
        for pc, want in expected.items():
            plan = build_plan(dataset, compat, m=10, pc=pc, global_seed=4242)
            for image_id, items in plan.by_image().items():
                n_diverse = sum(1 for it in items if it.kind == KIND_DIVERSE)
                if compat.candidates[image_id]:
                    assert n_diverse == want, (pc, image_id)
                else:
                    assert n_diverse == 0
                    assert (image_id in plan.downgraded) == (want > 0)
            for item in plan.items:
                if item.kind == KIND_DIVERSE:
                    partner = sims[index[item.image_id], index[item.caption_source_id]]
                    assert partner > tc

        first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_plan(build_plan(dataset, compat, m=10, pc=0.7, global_seed=4242), first)
        write_plan(build_plan(dataset, compat, m=10, pc=0.7, global_seed=4242), second)
        assert first.read_bytes() == second.read_bytes()


def test_feed_statistics():
    """p0=0.5 over 3659 images x 20 epochs pools to a synthetic fraction
    in [0.48, 0.52]; augmentation indices are uniform under a chi-squared
    test at alpha=0.001; p0=0 and p0=1 are exact."""
    with criterion("feed_statistics"):
        dataset = make_corpus(3659, seed=11, min_count=1, max_count=50)
        compat = CompatibilitySets(threshold=0.0, candidates={})
        plan = build_plan(dataset, compat, m=10, pc=0.0, global_seed=77)
        digest = hashlib.sha256(plan_to_jsonl(plan).encode()).hexdigest()

        total = 0
        augmented = 0
        per_index = Counter()
        for epoch in range(20):
            manifest = epoch_manifest(dataset, plan, digest, epoch, 0.5, require_store=False)
            for entry in manifest.entries:
                total += 1
                if entry.source["type"] == "augmented":
                    augmented += 1
                    per_index[entry.source["aug_index"]] += 1
        assert total == 3659 * 20
        assert 0.48 <= augmented / total <= 0.52

        observed = [per_index.get(k, 0) for k in range(10)]
        assert min(observed) > 0
        assert scipy.stats.chisquare(observed).pvalue >= 0.001

        all_real = epoch_manifest(dataset, plan, digest, 0, 0.0, require_store=False)
        assert all(e.source["type"] == "real" for e in all_real.entries)
        all_aug = epoch_manifest(dataset, plan, digest, 0, 1.0, require_store=False)
        assert all(e.source["type"] == "augmented" for e in all_aug.entries)


# 50 distinct captions whose derived mock hues sit >= 0.012 apart on the
# hue circle, so any swap visibly recolors the background.  Random
# caption picks cannot guarantee that (50 hashed hues almost surely
# contain a near-collision), hence the frozen list.
DESK_CAPTIONS = (
    "a photo of red apples on a pine desk",
    "a photo of red apples on a linen sheet",
    "a photo of red apples on a slate counter",
    "a photo of red apples on a cork board",
    "a photo of red apples on a steel bench",
    "a photo of red apples on a clay tile",
    "a photo of red apples on a felt mat",
    "a photo of red lemons on a pine desk",
    "a photo of red lemons on a linen sheet",
    "a photo of red lemons on a slate counter",
    "a photo of red lemons on a cork board",
    "a photo of red lemons on a steel bench",
    "a photo of red lemons on a clay tile",
    "a photo of red lemons on a glass shelf",
    "a photo of red pebbles on a pine desk",
    "a photo of red pebbles on a linen sheet",
    "a photo of red pebbles on a cork board",
    "a photo of red pebbles on a steel bench",
    "a photo of red pebbles on a clay tile",
    "a photo of red pebbles on a felt mat",
    "a photo of red bottles on a pine desk",
    "a photo of red bottles on a slate counter",
    "a photo of red bottles on a steel bench",
    "a photo of red bottles on a felt mat",
    "a photo of red bottles on a glass shelf",
    "a photo of red buttons on a pine desk",
    "a photo of red buttons on a slate counter",
    "a photo of red buttons on a cork board",
    "a photo of red buttons on a steel bench",
    "a photo of red buttons on a clay tile",
    "a photo of red acorns on a linen sheet",
    "a photo of red acorns on a clay tile",
    "a photo of red marbles on a pine desk",
    "a photo of red marbles on a slate counter",
    "a photo of red marbles on a clay tile",
    "a photo of red marbles on a glass shelf",
    "a photo of red shells on a cork board",
    "a photo of red shells on a glass shelf",
    "a photo of red coins on a slate counter",
    "a photo of red coins on a steel bench",
    "a photo of red beads on a pine desk",
    "a photo of red beads on a linen sheet",
    "a photo of ripe apples on a clay tile",
    "a photo of ripe lemons on a steel bench",
    "a photo of ripe bottles on a linen sheet",
    "a photo of ripe bottles on a felt mat",
    "a photo of ripe buttons on a pine desk",
    "a photo of ripe acorns on a cork board",
    "a photo of ripe shells on a pine desk",
    "a photo of ripe shells on a linen sheet",
)


def _desk_corpus():
    """50 train images, counts exactly 1..50, centers >= 12 px apart."""
    records = {}
    ids = []
    for i, caption in enumerate(DESK_CAPTIONS):
        image_id = f"img_{i:02d}"
        record = make_record(image_id, count=i + 1, seed=9000 + i)
        record.caption = caption
        records[image_id] = record
        ids.append(image_id)
    return CountingDataset(records=records, split_lists={"train": ids, "val": [], "test": []})


def _disk_mask(pixels):
    """Pixels that differ from the background beyond noise reach.

    The corner pixel is always background: centers sit >= 6 px from the
    border and disks reach 4, and per-pixel noise is +-NOISE_AMPLITUDE,
    so a 3x threshold separates the two populations exactly.
    """
    corner = pixels[0, 0].astype(np.int16)
    return np.abs(pixels.astype(np.int16) - corner).max(axis=2) > 3 * NOISE_AMPLITUDE


def test_desk_scale_fidelity(tmp_path):
    """Plan -> HTTP client -> mock backend on a 50-image corpus: every
    output's blob count equals its conditioning mass, caption swaps
    recolor the background but move no blob, all in under 2 minutes."""
    with criterion("desk_scale_fidelity"):
        start = time.monotonic()
        dataset = _desk_corpus()
        ids = dataset.split_ids("train")

        densities = tmp_path / "densities"
        densities.mkdir()
        for image_id in ids:
            record = dataset.records[image_id]
            dmap = render_density(record.points, record.width, record.height, sigma=2.0)
            (densities / f"{image_id}.dmap").write_bytes(encode_dmap(dmap))

        embeddings = embed_corpus({i: dataset.records[i].caption for i in ids})
        compat = build_compatible_sets(embeddings, 0.0)
        plan = build_plan(dataset, compat, m=10, pc=0.5, global_seed=2468)
        assert len(plan.items) == 500

        store = tmp_path / "store"
        with run_local_service() as url:
            outcomes = run_plan(
                plan,
                url,
                densities,
                store,
                concurrency=4,
                points_lookup=lambda image_id: list(dataset.records[image_id].points),
            )
        assert len(outcomes) == 500

        result = plan_fidelity(plan, store, densities)
        assert result.n == 500
        assert result.mae == 0.0
        assert result.rmse == 0.0

        for image_id, items in plan.by_image().items():
            base = next(it for it in items if it.kind == KIND_BASELINE)
            base_pixels = np.asarray(Image.open(store / image_id / f"{base.aug_index}.png"))
            base_mask = _disk_mask(base_pixels)
            for item in items:
                if item.kind != KIND_DIVERSE:
                    continue
                pixels = np.asarray(Image.open(store / image_id / f"{item.aug_index}.png"))
                mask = _disk_mask(pixels)
                assert np.array_equal(mask, base_mask), (image_id, item.aug_index)
                base_bg = base_pixels[~base_mask].mean(axis=0)
                swap_bg = pixels[~mask].mean(axis=0)
                assert np.abs(base_bg - swap_bg).max() > 1.0, (image_id, item.aug_index)

        assert time.monotonic() - start < 120.0


def test_metrics_and_sweep():
    """mae/rmse match scalar oracles to 1e-9 and rmse >= mae on 1e4
    random vectors; a 6-value tc sweep yields exactly 6 CSV rows that
    re-parse to the original rows."""
    with criterion("metrics_and_sweep"):
        rng = random.Random(8128)
        for _ in range(10_000):
            n = rng.randint(1, 64)
            predicted = [rng.uniform(0.0, 400.0) for _ in range(n)]
            truth = [rng.uniform(0.0, 400.0) for _ in range(n)]
            got_mae = mae(predicted, truth)
            got_rmse = rmse(predicted, truth)
            oracle_mae = sum(abs(p - t) for p, t in zip(predicted, truth)) / n
            oracle_rmse = math.sqrt(sum((p - t) ** 2 for p, t in zip(predicted, truth)) / n)
            assert abs(got_mae - oracle_mae) <= 1e-9
            assert abs(got_rmse - oracle_rmse) <= 1e-9
            assert got_rmse >= got_mae - 1e-12

        dataset = make_corpus(8, seed=2, min_count=1, max_count=6)
        evaluator = make_mock_evaluator(dataset, global_seed=5, limit=6)
        values = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9]
        rows = run_sweep("tc", values, {"pc": 1.0, "M": 2, "p0": 1.0}, evaluator)
        assert len(rows) == 6
        assert [row.value for row in rows] == values
        assert all(row.status == "ok" for row in rows)
        assert sweep_from_csv(sweep_to_csv(rows)) == rows
