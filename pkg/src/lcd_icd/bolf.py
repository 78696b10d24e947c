"""Bag-of-local-features (BoLF) image representation.

An image is described by a full-image feature plus one feature per object
proposal region (OPR). Proposals come from a fixed unsupervised layout of five
boxes and, optionally, from externally supplied boxes (e.g. a detector run
offline).
"""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np
import numpy.typing as npt
from PIL import Image

from .console import warn
from .errors import (
    BoxOutOfBoundsError,
    DataError,
    DegenerateBoxError,
    DimensionMismatchError,
)

# Supervised proposals kept per image; with the five unsupervised boxes this
# gives at most 16 OPRs.
MAX_EXTERNAL_BOXES = 11
N_UNSUPERVISED = 5
MAX_OPRS = N_UNSUPERVISED + MAX_EXTERNAL_BOXES

FeatureVector = npt.NDArray[np.float64]


class OprSource(str, Enum):
    FULL_IMAGE = "full"
    UNSUPERVISED = "unsupervised"
    EXTERNAL = "external"


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Half-open pixel box [x0, x1) x [y0, y1), origin top-left."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.x1 <= self.x0 or self.y1 <= self.y0:
            raise DegenerateBoxError(f"degenerate box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, x: int, y: int) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def fits_in(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def check_within(self, width: int, height: int) -> None:
        """Raise BoxOutOfBoundsError unless the box lies inside a width x height image."""
        if not self.fits_in(width, height):
            raise BoxOutOfBoundsError(
                f"box {self.as_list()} outside {width}x{height} image"
            )

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, values: Sequence[int]) -> "BoundingBox":
        if len(values) != 4:
            raise DataError(f"box needs 4 coordinates, got {len(values)}")
        x0, y0, x1, y1 = (int(v) for v in values)
        return cls(x0, y0, x1, y1)

    @classmethod
    def full(cls, width: int, height: int) -> "BoundingBox":
        return cls(0, 0, width, height)


def as_feature_vector(values) -> FeatureVector:
    """Convert values to a read-only float64 vector, rejecting NaN/Inf and empty input."""
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.size == 0:
        raise DataError("feature vector is empty")
    if not np.all(np.isfinite(vector)):
        raise DataError("feature vector contains non-finite values")
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class Opr:
    box: BoundingBox
    feature: FeatureVector
    source: OprSource

    @property
    def dim(self) -> int:
        return int(self.feature.shape[0])


@dataclass(frozen=True, eq=False)
class BolfImage:
    """One image as a bag of local features.

    ``oprs`` holds the local proposals only; the full-image feature is kept
    separately and exposed as a pseudo-OPR through ``entries``.
    """

    id: str
    width: int
    height: int
    full_feature: FeatureVector
    oprs: tuple[Opr, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"image {self.id}: non-positive size {self.width}x{self.height}")
        if len(self.oprs) > MAX_OPRS:
            raise DataError(f"image {self.id}: {len(self.oprs)} OPRs exceeds {MAX_OPRS}")
        for opr in self.oprs:
            opr.box.check_within(self.width, self.height)
            if opr.dim != self.dim:
                raise DimensionMismatchError(
                    f"image {self.id}: OPR dim {opr.dim} != full-image dim {self.dim}"
                )

    @property
    def dim(self) -> int:
        return int(self.full_feature.shape[0])

    @property
    def full_opr(self) -> Opr:
        return Opr(BoundingBox.full(self.width, self.height), self.full_feature, OprSource.FULL_IMAGE)

    @property
    def entries(self) -> tuple[Opr, ...]:
        """Full-image pseudo-OPR followed by the local OPRs."""
        return (self.full_opr, *self.oprs)

    @property
    def feature_count(self) -> int:
        return 1 + len(self.oprs)

    def feature_matrix(self) -> npt.NDArray[np.float64]:
        return np.vstack([opr.feature for opr in self.entries])


class FeatureExtractor(Protocol):
    """Anything that maps a square grayscale patch to a fixed-length vector."""

    @property
    def input_side(self) -> int: ...

    @property
    def feature_dim(self) -> int: ...

    def encode(self, pixels: npt.ArrayLike) -> FeatureVector: ...


def unsupervised_proposals(width: int, height: int) -> list[BoundingBox]:
    """Five overlapping boxes around the image centre.

    Args:
        width: Image width in pixels, at least 3.
        height: Image height in pixels, at least 3.

    Returns:
        The centre box followed by the four two-thirds corner boxes
        (top-left, top-right, bottom-left, bottom-right). Thirds are floored.

    Raises:
        DegenerateBoxError: If either dimension is below 3.
    """
    if width < 3 or height < 3:
        raise DegenerateBoxError(f"image {width}x{height} too small for proposals")
    w1, w2 = width // 3, (2 * width) // 3
    h1, h2 = height // 3, (2 * height) // 3
    return [
        BoundingBox(w1, h1, w2, h2),
        BoundingBox(0, 0, w2, h2),
        BoundingBox(w1, 0, width, h2),
        BoundingBox(0, h1, w2, height),
        BoundingBox(w1, h1, width, height),
    ]


def resize_patch(pixels: npt.ArrayLike, side: int) -> npt.NDArray[np.float64]:
    """Bilinear resize of a 2-D grayscale array to side x side."""
    patch = np.asarray(pixels, dtype=np.float32)
    if patch.shape == (side, side):
        return patch.astype(np.float64)
    image = Image.fromarray(patch).resize((side, side), Image.Resampling.BILINEAR)
    return np.asarray(image, dtype=np.float64)


def crop_patch(pixels: npt.NDArray, box: BoundingBox, side: int) -> npt.NDArray[np.float64]:
    """Crop ``box`` out of an (H, W) image and return it flattened at side x side."""
    return resize_patch(pixels[box.y0:box.y1, box.x0:box.x1], side).reshape(-1)


def assemble_bolf(
    image_id: str,
    width: int,
    height: int,
    *,
    pixels: npt.ArrayLike | None = None,
    features: Sequence[Opr] | None = None,
    external_boxes: Sequence[BoundingBox] = (),
    extractor: FeatureExtractor | None = None,
) -> BolfImage:
    """Build the BoLF of one image.

    Either ``pixels`` (with an ``extractor``) or precomputed ``features`` must
    be given. Precomputed features are attached verbatim; exactly one of them
    must be the full-image entry.

    Raises:
        BoxOutOfBoundsError: An external box falls outside the image.
        DimensionMismatchError: Pixel array shape or feature dims disagree.
    """
    if features is not None:
        return _from_precomputed(image_id, width, height, features)

    if pixels is None or extractor is None:
        raise DataError(f"image {image_id}: need pixels and an extractor, or precomputed features")

    image = np.asarray(pixels, dtype=np.float64)
    if image.shape != (height, width):
        raise DimensionMismatchError(
            f"image {image_id}: pixel array {image.shape} != ({height}, {width})"
        )
    for box in external_boxes:
        box.check_within(width, height)
    kept = list(external_boxes[:MAX_EXTERNAL_BOXES])
    if len(external_boxes) > MAX_EXTERNAL_BOXES:
        warn(f"image {image_id}: keeping first {MAX_EXTERNAL_BOXES} of {len(external_boxes)} external boxes")

    side = extractor.input_side
    full = extractor.encode(resize_patch(image, side).reshape(-1))
    oprs = [
        Opr(box, extractor.encode(crop_patch(image, box, side)), OprSource.UNSUPERVISED)
        for box in unsupervised_proposals(width, height)
    ]
    oprs += [
        Opr(box, extractor.encode(crop_patch(image, box, side)), OprSource.EXTERNAL)
        for box in kept
    ]
    return BolfImage(image_id, width, height, as_feature_vector(full), tuple(oprs))


def _from_precomputed(image_id: str, width: int, height: int, features: Sequence[Opr]) -> BolfImage:
    full = [opr for opr in features if opr.source is OprSource.FULL_IMAGE]
    if len(full) != 1:
        raise DataError(f"image {image_id}: expected one full-image feature, got {len(full)}")
    local = tuple(opr for opr in features if opr.source is not OprSource.FULL_IMAGE)
    return BolfImage(image_id, width, height, full[0].feature, local)
