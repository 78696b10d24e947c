"""Tests for rank-based LoC estimation."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lcd_icd.autoencoder import init_model
from lcd_icd.bolf import BoundingBox, assemble_bolf
from lcd_icd.change_detect import (
    LocMap,
    detect,
    fuse_pixel,
    loc_map_for_hypothesis,
    min_pool_hypotheses,
    opr_rank,
    opr_ranks,
    query_rankings,
)
from lcd_icd.errors import DimensionMismatchError, NoCoverageError, UsageError
from lcd_icd.evaluation import peak_in_box
from lcd_icd.map_index import Hypothesis, MapDatabase, rank_features
from lcd_icd.synthetic import generate_synthetic

from .helpers import brute_rank, make_image, random_image, random_images


class TestFusePixel:
    """Tests for harmonic rank fusion."""

    @pytest.mark.parametrize(
        "ranks, expected",
        [([7], 7.0), ([2, 6], 3.0), ([3, 4, 6], 4.0), ([1, 1, 1], 1.0)],
    )
    def test_hand_examples_are_exact(self, ranks, expected):
        assert fuse_pixel(ranks) == expected

    def test_no_coverage(self):
        with pytest.raises(NoCoverageError):
            fuse_pixel([])

    @given(st.lists(st.integers(1, 100_000), min_size=1, max_size=17))
    def test_matches_direct_harmonic_mean(self, ranks):
        direct = len(ranks) / sum(1.0 / r for r in ranks)
        fused = fuse_pixel(ranks)
        assert fused == pytest.approx(direct, rel=1e-12)
        assert min(ranks) * (1 - 1e-12) <= fused <= max(ranks) * (1 + 1e-12)

    def test_many_random_multisets(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            ranks = rng.integers(1, 5000, size=rng.integers(1, 17)).tolist()
            direct = len(ranks) / sum(1.0 / r for r in ranks)
            assert abs(fuse_pixel(ranks) - direct) <= 1e-12 * direct


def two_image_map() -> MapDatabase:
    return MapDatabase([
        make_image("a", [0.0, 0.0], [[1.0, 0.0]]),
        make_image("b", [0.0, 0.0], [[3.0, 0.0]]),
    ])


class TestOprRank:
    """Tests for the per-reference rank of one retrieval list."""

    def test_hand_example(self):
        db = two_image_map()
        ranked = rank_features(db, [3.0, 0.0])
        # order: b/1 (0), a/1 (2), a/0 (3), b/0 (3)
        assert opr_rank(db, ranked, 0) == 2
        assert opr_rank(db, ranked, 1) == 1

    def test_matches_recomputed_positions(self):
        """opr_rank is the first position of the reference in an independently sorted list."""
        for seed in range(50):
            images = random_images(seed)
            db = MapDatabase(images)
            query = random_image(np.random.default_rng(3000 + seed), "q")
            for opr in query.entries[:3]:
                ranked = rank_features(db, opr.feature)
                expected = brute_rank(images, opr.feature)
                for ref in range(len(images)):
                    first = next(p for p, (_, i, _) in enumerate(expected, start=1) if i == ref)
                    assert opr_rank(db, ranked, ref) == first

    def test_one_rank_per_query_entry(self):
        db = two_image_map()
        query = make_image("q", [3.0, 0.0], [[1.0, 0.0]])
        ranks = opr_ranks(db, query, 0)
        assert [r.query_opr_index for r in ranks] == [0, 1]
        assert [r.rank for r in ranks] == [2, 1]


class TestLocMap:
    """Tests for per-hypothesis maps and min-pooling."""

    def test_shape_checked(self):
        with pytest.raises(DimensionMismatchError):
            LocMap(3, 2, np.ones((3, 2)))

    def test_block_fusion_matches_per_pixel_fusion(self):
        rng = np.random.default_rng(11)
        images = [random_image(rng, f"m{i}", dim=4, max_local=6) for i in range(12)]
        db = MapDatabase(images)
        boxes = [BoundingBox(0, 0, 7, 5), BoundingBox(3, 2, 12, 9), BoundingBox(5, 0, 9, 4)]
        query = make_image("q", rng.normal(size=4), rng.normal(size=(3, 4)), width=12, height=9, boxes=boxes)
        for ref in (0, 5):
            loc = loc_map_for_hypothesis(db, query, ref)
            ranks = [r.rank for r in opr_ranks(db, query, ref)]
            for y in range(9):
                for x in range(12):
                    covering = [r for r, opr in zip(ranks, query.entries) if opr.box.contains(x, y)]
                    assert loc.values[y, x] == fuse_pixel(covering)
            assert loc.hypothesis_id == ref

    def test_min_pool(self):
        a = LocMap(2, 1, np.array([[1.0, 5.0]]), 0)
        b = LocMap(2, 1, np.array([[3.0, 2.0]]), 1)
        pooled = min_pool_hypotheses([a, b])
        assert pooled.values.tolist() == [[1.0, 2.0]]
        assert pooled.hypothesis_id is None
        assert min_pool_hypotheses([b]).hypothesis_id == 1

    def test_min_pool_empty(self):
        with pytest.raises(UsageError):
            min_pool_hypotheses([])

    def test_min_pool_size_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            min_pool_hypotheses([LocMap(2, 1, np.ones((1, 2))), LocMap(1, 2, np.ones((2, 1)))])


class TestDetect:
    """Tests for simultaneous LCD + ICD."""

    def test_planted_duplicate_gives_loc_one(self):
        """A query planted verbatim in the map localizes to itself with zero score and LoC 1."""
        for seed in range(20):
            images = random_images(seed)
            db = MapDatabase(images)
            target = seed % len(images)
            query = images[target]
            loc = detect(db, query, 10)
            assert np.all(loc.values == 1.0)
            assert loc.values.shape == (query.height, query.width)

    def test_loc_at_least_one(self):
        rng = np.random.default_rng(4)
        db = MapDatabase([random_image(rng, f"m{i}") for i in range(15)])
        loc = detect(db, random_image(rng, "q"), 5)
        assert loc.values.min() >= 1.0

    def test_explicit_hypotheses(self):
        db = two_image_map()
        query = make_image("q", [3.0, 0.0], [[1.0, 0.0]])
        loc = detect(db, query, hypotheses=[Hypothesis(0, 0.0)])
        box = query.oprs[0].box
        # pixels inside the local box fuse ranks 2 and 1
        assert loc.values[box.y0, box.x0] == pytest.approx(4 / 3)
        assert loc.values[query.height - 1, query.width - 1] == 2.0

    def test_rankings_reused(self):
        db = two_image_map()
        query = make_image("q", [3.0, 0.0], [[1.0, 0.0]])
        rankings = query_rankings(db, query)
        assert len(rankings) == query.feature_count
        assert np.array_equal(
            loc_map_for_hypothesis(db, query, 1, rankings).values,
            loc_map_for_hypothesis(db, query, 1).values,
        )


class TestPlantedChange:
    """LoC of synthetic scenes with one re-textured object, against the true reference."""

    def test_peak_inside_changed_box(self):
        """100 planted changes: the map peaks only inside the changed box in at least 90."""
        dataset = generate_synthetic(100, 20, 1.0, 0.02, seed=0, n_queries=100, detections=True)
        model = init_model(16, 0)

        def bolf(image):
            height, width = image.pixels.shape
            return assemble_bolf(
                image.id, width, height, pixels=image.pixels / 255.0, external_boxes=image.boxes, extractor=model
            )

        db = MapDatabase(bolf(ref) for ref in dataset.references)
        hits = 0
        for query, annotation in zip(dataset.queries, dataset.annotations):
            loc = loc_map_for_hypothesis(db, bolf(query), db.index_of(annotation.reference_id))
            hits += peak_in_box(loc, annotation.boxes)
        assert hits >= 90
