"""Map database: reference BoLFs, exact per-feature ranking and NBNN localization.

A database is read-mostly. Retrieval functions only read from it and may run
concurrently on the same instance; ``insert`` must not overlap with them.
"""

import json
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .bolf import BolfImage, FeatureVector
from .errors import (
    DataError,
    DimensionMismatchError,
    DuplicateImageError,
    UnknownReferenceError,
    UsageError,
)
from .manifest import image_to_record, load_manifest, record_to_image, write_jsonl

DEFAULT_Y = 10
DEFAULT_W_OPR = 1 / 20

MAP_FORMAT = "lcd-icd-map"
MAP_VERSION = 1


@dataclass(frozen=True)
class _FeatureIndex:
    matrix: npt.NDArray[np.float64]
    image_of: npt.NDArray[np.int64]
    opr_of: npt.NDArray[np.int64]
    offsets: npt.NDArray[np.int64]


class MapDatabase:
    """Ordered collection of reference images with a flat feature table.

    Feature table entries are ordered by (image_index, opr_index); opr_index 0
    of every image is its full-image feature.
    """

    def __init__(self, images: Iterable[BolfImage] = ()):
        self.images: list[BolfImage] = []
        self._ids: dict[str, int] = {}
        self._index: _FeatureIndex | None = None
        for image in images:
            self.insert(image)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def dim(self) -> int | None:
        return self.images[0].dim if self.images else None

    def insert(self, image: BolfImage) -> "MapDatabase":
        """Append an image and register all of its features.

        Raises:
            DuplicateImageError: The id is already present.
            DimensionMismatchError: Feature dim differs from the database's.
        """
        if image.id in self._ids:
            raise DuplicateImageError(f"image {image.id!r} already in map")
        if self.dim is not None and image.dim != self.dim:
            raise DimensionMismatchError(f"image {image.id!r} has dim {image.dim}, map has {self.dim}")
        self._ids[image.id] = len(self.images)
        self.images.append(image)
        self._index = None
        return self

    def index_of(self, image_id: str) -> int:
        try:
            return self._ids[image_id]
        except KeyError:
            raise UnknownReferenceError(f"image {image_id!r} not in map") from None

    @property
    def feature_count(self) -> int:
        return sum(image.feature_count for image in self.images)

    @property
    def feature_table(self) -> list[tuple[int, int, FeatureVector]]:
        return [
            (i, j, opr.feature)
            for i, image in enumerate(self.images)
            for j, opr in enumerate(image.entries)
        ]

    def index(self) -> _FeatureIndex:
        if self._index is None:
            counts = [image.feature_count for image in self.images]
            offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            if self.images:
                matrix = np.vstack([image.feature_matrix() for image in self.images])
            else:
                matrix = np.empty((0, 0))
            image_of = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
            opr_of = np.concatenate([np.arange(c, dtype=np.int64) for c in counts]) if counts else np.empty(0, np.int64)
            self._index = _FeatureIndex(matrix, image_of, opr_of, offsets)
        return self._index

    def image_features(self, image_index: int) -> npt.NDArray[np.float64]:
        idx = self.index()
        return idx.matrix[idx.offsets[image_index]:idx.offsets[image_index + 1]]


def insert(db: MapDatabase, image: BolfImage) -> MapDatabase:
    return db.insert(image)


@dataclass(frozen=True)
class RankedList:
    """All reference features sorted by distance to one query feature.

    Attributes:
        order: Feature-table indices, nearest first.
        distances: Distances in that order.
        image_index: Image of each ranked entry.
        opr_index: OPR (within its image) of each ranked entry.
        positions: 1-based rank of every feature-table entry (inverse of order).
    """

    order: npt.NDArray[np.int64]
    distances: npt.NDArray[np.float64]
    image_index: npt.NDArray[np.int64]
    opr_index: npt.NDArray[np.int64]
    positions: npt.NDArray[np.int64]

    def __len__(self) -> int:
        return len(self.order)

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(d))
            for i, j, d in zip(self.image_index, self.opr_index, self.distances)
        ]


def _check_dim(db: MapDatabase, vector: npt.NDArray) -> None:
    if db.dim is None:
        raise DataError("map database is empty")
    if vector.shape != (db.dim,):
        raise DimensionMismatchError(f"query dim {vector.shape} != map dim {db.dim}")


def rank_features(db: MapDatabase, query_feature: npt.ArrayLike) -> RankedList:
    """Rank every reference feature by Euclidean distance to the query.

    Ties are broken by (image_index, opr_index), which is feature-table order,
    so a stable sort on distance suffices.
    """
    q = np.asarray(query_feature, dtype=np.float64)
    _check_dim(db, q)
    idx = db.index()
    distances = np.sqrt(((idx.matrix - q) ** 2).sum(axis=1))
    # ties keep map order
    order = np.argsort(distances, kind="stable")
    positions = np.empty_like(order)
    positions[order] = np.arange(1, len(order) + 1)
    return RankedList(order, distances[order], idx.image_of[order], idx.opr_of[order], positions)


def nbnn_score(
    db: MapDatabase,
    query: BolfImage,
    ref_index: int,
    w_opr: float = DEFAULT_W_OPR,
) -> float:
    """NBNN dissimilarity between a query and one reference image.

    score = |full_q - full_r| + w_opr * mean_j min_k |x_j - y_k|, where j runs
    over the query's local OPRs and k over the reference's local OPRs (its full
    feature stands in when it has none). Lower is more similar.
    """
    if not 0 <= ref_index < len(db):
        raise UsageError(f"reference index {ref_index} out of range for {len(db)} images")
    _check_dim(db, query.full_feature)
    ref = db.image_features(ref_index)
    full = float(np.sqrt(((query.full_feature - ref[0]) ** 2).sum()))
    if not query.oprs or w_opr == 0:
        return full
    local_q = query.feature_matrix()[1:]
    local_r = ref[1:] if len(ref) > 1 else ref
    d = np.sqrt(((local_q[:, None, :] - local_r[None, :, :]) ** 2).sum(axis=2))
    return full + w_opr * float(d.min(axis=1).mean())


@dataclass(frozen=True)
class Hypothesis:
    image_index: int
    nbnn_score: float


def localize(
    db: MapDatabase,
    query: BolfImage,
    y: int = DEFAULT_Y,
    w_opr: float = DEFAULT_W_OPR,
) -> list[Hypothesis]:
    """The Y references with the lowest NBNN score, ascending, ties by index.

    Raises:
        UsageError: Y < 1 or Y larger than the database.
    """
    if y < 1 or y > len(db):
        raise UsageError(f"Y={y} invalid for a map of {len(db)} images")
    scores = [nbnn_score(db, query, i, w_opr) for i in range(len(db))]
    ranked = sorted(range(len(db)), key=lambda i: (scores[i], i))
    return [Hypothesis(i, scores[i]) for i in ranked[:y]]


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".idx.json")


def save_map(db: MapDatabase, path: Path) -> None:
    """Write the map as a precomputed-feature manifest plus an index header."""
    path = Path(path)
    write_jsonl(path, [image_to_record(image) for image in db.images])
    header = {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "n_images": len(db),
        "dim": db.dim,
        "n_features": db.feature_count,
        "feature_counts": [image.feature_count for image in db.images],
    }
    _header_path(path).write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")


def load_map(path: Path) -> MapDatabase:
    """Load a map and check it against its index header.

    Raises:
        DataError: Header missing fields or disagreeing with the manifest.
    """
    path = Path(path)
    header_path = _header_path(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{header_path}: invalid JSON ({e.msg})") from e
    if not isinstance(header, dict) or header.get("format") != MAP_FORMAT or header.get("version") != MAP_VERSION:
        raise DataError(f"{header_path}: not a version {MAP_VERSION} {MAP_FORMAT} header")
    db = MapDatabase(record_to_image(record) for record in load_manifest(path))
    found = {
        "n_images": len(db),
        "dim": db.dim,
        "n_features": db.feature_count,
        "feature_counts": [image.feature_count for image in db.images],
    }
    for key, value in found.items():
        if header.get(key) != value:
            raise DataError(f"{header_path}: {key}={header.get(key)} but manifest has {value}")
    return db
