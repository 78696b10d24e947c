"""Small builders shared by the tests."""

import math

import numpy as np

from lcd_icd.bolf import BolfImage, BoundingBox, Opr, OprSource, as_feature_vector

SIZE = 30


def local_box(j: int) -> BoundingBox:
    return BoundingBox(j, j % 7, j + 10, j % 7 + 12)


def make_image(image_id: str, full, local=(), width: int = SIZE, height: int = SIZE, boxes=None) -> BolfImage:
    """A BolfImage from raw vectors; local OPR j gets ``local_box(j)`` unless boxes are given."""
    boxes = boxes if boxes is not None else [local_box(j) for j in range(len(local))]
    oprs = tuple(
        Opr(box, as_feature_vector(values), OprSource.UNSUPERVISED)
        for box, values in zip(boxes, local)
    )
    return BolfImage(image_id, width, height, as_feature_vector(full), oprs)


def random_image(rng: np.random.Generator, image_id: str, dim: int = 16, max_local: int = 15) -> BolfImage:
    n_local = int(rng.integers(0, max_local + 1))
    return make_image(image_id, rng.normal(size=dim), rng.normal(size=(n_local, dim)))


def random_images(seed: int, max_images: int = 40, dim: int = 16) -> list[BolfImage]:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, max_images + 1))
    return [random_image(rng, f"m{i:03d}", dim) for i in range(n)]


def brute_rank(images: list[BolfImage], query_feature) -> list[tuple[float, int, int]]:
    """(distance, image, opr) for every map feature, sorted with the documented tie-break."""
    entries = [
        (math.dist(query_feature, opr.feature), i, j)
        for i, image in enumerate(images)
        for j, opr in enumerate(image.entries)
    ]
    return sorted(entries)


def brute_nbnn(query: BolfImage, ref: BolfImage, w_opr: float) -> float:
    full = math.dist(query.full_feature, ref.full_feature)
    if not query.oprs:
        return full
    ref_local = [opr.feature for opr in ref.oprs] or [ref.full_feature]
    nearest = [min(math.dist(x.feature, y) for y in ref_local) for x in query.oprs]
    return full + w_opr * sum(nearest) / len(nearest)


def smooth_gradients(count: int, side: int, seed: int) -> np.ndarray:
    """Linear ramps in [0.3, 0.7], each paired with its mirror so every pixel averages 0.5."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    ramps = []
    for angle in rng.uniform(0.0, 2 * np.pi, count // 2):
        t = np.cos(angle) * xx + np.sin(angle) * yy
        t = (t - t.min()) / (t.max() - t.min())
        ramps += [0.3 + 0.4 * t, 0.7 - 0.4 * t]
    return np.array(ramps)


def checkerboards(side: int) -> np.ndarray:
    """The two 1-pixel checkerboards of 0s and 1s."""
    board = (np.add.outer(np.arange(side), np.arange(side)) % 2).astype(np.float64)
    return np.array([board, 1.0 - board])
