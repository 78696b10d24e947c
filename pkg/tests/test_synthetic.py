"""Tests for the synthetic benchmark generator."""

import numpy as np
import pytest

from lcd_icd.errors import UsageError
from lcd_icd.evaluation import load_annotations
from lcd_icd.manifest import load_manifest, load_pixels
from lcd_icd.synthetic import MAX_OBJECTS, generate_synthetic, write_synthetic


def small_set(**kwargs):
    params = dict(n_refs=5, n_destructors=3, change_rate=0.5, noise_sigma=0.02, seed=7, n_queries=8)
    params.update(kwargs)
    return generate_synthetic(**params)


def crop(image, box) -> np.ndarray:
    return image.pixels[box.y0:box.y1, box.x0:box.x1]


class TestGenerateSynthetic:
    """Tests for generate_synthetic."""

    def test_counts_and_ids(self):
        dataset = small_set()
        assert [im.id for im in dataset.references] == [
            "r0000", "r0001", "r0002", "r0003", "r0004", "d0000", "d0001", "d0002",
        ]
        assert [q.id for q in dataset.queries] == [f"q{i:04d}" for i in range(8)]
        assert [a.reference_id for a in dataset.annotations] == [f"r{i % 5:04d}" for i in range(8)]

    def test_same_seed_same_images(self):
        a, b = small_set(), small_set()
        for x, y in zip(a.references + a.queries, b.references + b.queries):
            assert np.array_equal(x.pixels, y.pixels)
            assert x.objects == y.objects

    def test_different_seed_differs(self):
        a, b = small_set(seed=1), small_set(seed=2)
        assert not np.array_equal(a.references[0].pixels, b.references[0].pixels)

    def test_no_change_no_noise_reproduces_reference(self):
        dataset = small_set(change_rate=0.0, noise_sigma=0.0)
        for i, query in enumerate(dataset.queries):
            assert np.array_equal(query.pixels, dataset.references[i % 5].pixels)
        assert all(not a.boxes for a in dataset.annotations)

    def test_change_confined_to_annotated_box(self):
        dataset = small_set(change_rate=1.0, noise_sigma=0.0)
        for i, (query, annotation) in enumerate(zip(dataset.queries, dataset.annotations)):
            (box,) = annotation.boxes
            assert box in query.objects
            diff = query.pixels != dataset.references[i % 5].pixels
            assert diff[box.y0:box.y1, box.x0:box.x1].any()
            diff[box.y0:box.y1, box.x0:box.x1] = False
            assert not diff.any()

    def test_object_boxes_disjoint_and_inside(self):
        for image in small_set().references:
            height, width = image.pixels.shape
            assert 1 <= len(image.objects) <= MAX_OBJECTS
            for box in image.objects:
                box.check_within(width, height)
            for j, a in enumerate(image.objects):
                for b in image.objects[j + 1:]:
                    assert a.x1 <= b.x0 or b.x1 <= a.x0 or a.y1 <= b.y0 or b.y1 <= a.y0

    def test_objects_are_textured(self):
        for image in small_set().references:
            for box in image.objects:
                assert crop(image, box).std() > 0

    def test_no_object_repeats_across_images(self):
        """Outside its own reference, no query object appears pixel for pixel in any reference."""
        dataset = generate_synthetic(8, 8, 1.0, 0.0, seed=3, n_queries=16)
        seen: dict[tuple, set[str]] = {}
        for ref in dataset.references:
            for box in ref.objects:
                content = crop(ref, box)
                seen.setdefault((content.shape, content.tobytes()), set()).add(ref.id)
        for query, annotation in zip(dataset.queries, dataset.annotations):
            for box in query.objects:
                content = crop(query, box)
                owners = seen.get((content.shape, content.tobytes()), set())
                if box in annotation.boxes:
                    assert owners == set()
                else:
                    assert owners == {annotation.reference_id}

    def test_scenes_differ(self):
        dataset = small_set(n_refs=10, n_destructors=10)
        thumbs = [ref.pixels[::6, ::6].astype(float) / 255 for ref in dataset.references]
        for i, a in enumerate(thumbs):
            for b in thumbs[i + 1:]:
                assert np.sqrt(((a - b) ** 2).mean()) > 0.02

    def test_no_proposals_by_default(self):
        dataset = small_set()
        assert all(im.boxes == () for im in dataset.references + dataset.queries)

    def test_detections_sit_inside_objects(self):
        plain, detected = small_set(change_rate=1.0), small_set(change_rate=1.0, detections=True)
        for a, b in zip(plain.references + plain.queries, detected.references + detected.queries):
            assert np.array_equal(a.pixels, b.pixels)
            assert len(b.boxes) == len(b.objects)
            for det, obj in zip(b.boxes, b.objects):
                assert obj.x0 <= det.x0 < det.x1 <= obj.x1
                assert obj.y0 <= det.y0 < det.y1 <= obj.y1
                assert max(det.x0 - obj.x0, obj.x1 - det.x1, det.y0 - obj.y0, obj.y1 - det.y1) <= 2

    def test_unchanged_objects_keep_their_detection(self):
        dataset = small_set(change_rate=1.0, detections=True)
        for i, (query, annotation) in enumerate(zip(dataset.queries, dataset.annotations)):
            ref = dataset.references[i % 5]
            kept = [det for det, obj in zip(query.boxes, query.objects) if obj not in annotation.boxes]
            assert set(kept) <= set(ref.boxes)
            assert len(kept) == len(query.boxes) - 1

    @pytest.mark.parametrize(
        "kwargs",
        [{"change_rate": 1.5}, {"change_rate": -0.1}, {"noise_sigma": -1.0}, {"n_refs": 0}, {"n_queries": 0}],
    )
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(UsageError):
            small_set(**kwargs)


class TestWriteSynthetic:
    """Tests for write_synthetic."""

    def test_files_load_back(self, tmp_path):
        dataset = small_set()
        refs, queries, annotations = write_synthetic(dataset, tmp_path)
        records = load_manifest(refs)
        assert [r.id for r in records] == [im.id for im in dataset.references]
        assert np.array_equal(load_pixels(records[0]), dataset.references[0].pixels / 255.0)
        assert records[0].boxes == ()
        assert len(load_manifest(queries)) == 8
        assert load_annotations(annotations) == dataset.annotations

    def test_detections_written_as_boxes(self, tmp_path):
        dataset = small_set(detections=True)
        _, queries, _ = write_synthetic(dataset, tmp_path)
        records = load_manifest(queries)
        assert [r.boxes for r in records] == [q.boxes for q in dataset.queries]

    def test_byte_identical_reruns(self, tmp_path):
        write_synthetic(small_set(), tmp_path / "a")
        write_synthetic(small_set(), tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
