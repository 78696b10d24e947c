"""Dataset manifests: one JSON record per line describing an image.

Record forms::

    {"id": "r0001", "width": 120, "height": 90, "image_path": "refs/r0001.pgm",
     "boxes": [[x0, y0, x1, y1], ...]}
    {"id": "r0001", "width": 120, "height": 90,
     "features": [{"box": [x0, y0, x1, y1], "source": "full", "values": [...]}, ...]}

``image_path`` is relative to the manifest's directory; ``boxes`` (external
proposals) is optional.
"""

import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .bolf import (
    BolfImage,
    BoundingBox,
    FeatureExtractor,
    Opr,
    OprSource,
    as_feature_vector,
    assemble_bolf,
)
from .errors import DataError, DimensionMismatchError, ManifestParseError
from .pnm import read_pgm


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    width: int
    height: int
    image_path: Path | None = None
    boxes: tuple[BoundingBox, ...] = ()
    features: tuple[Opr, ...] | None = None
    line_number: int = 0


def read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, object) for every non-blank line."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestParseError(path, line_number, f"invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise ManifestParseError(path, line_number, "record is not an object")
            yield line_number, obj


def write_jsonl(path: Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def _parse_feature(raw: dict) -> Opr:
    return Opr(
        box=BoundingBox.from_list(raw["box"]),
        feature=as_feature_vector(raw["values"]),
        source=OprSource(raw["source"]),
    )


def parse_record(obj: dict, base_dir: Path, line_number: int = 0) -> ManifestRecord:
    """Validate one manifest object.

    Raises:
        DataError: Missing fields, bad boxes, or neither/both of
            ``image_path`` and ``features``.
    """
    for key in ("id", "width", "height"):
        if key not in obj:
            raise DataError(f"missing field {key!r}")
    width, height = int(obj["width"]), int(obj["height"])
    if width <= 0 or height <= 0:
        raise DataError(f"non-positive image size {width}x{height}")

    has_path, has_features = "image_path" in obj, "features" in obj
    if has_path == has_features:
        raise DataError("record needs exactly one of 'image_path' or 'features'")

    boxes = tuple(BoundingBox.from_list(b) for b in obj.get("boxes", []))
    for box in boxes:
        box.check_within(width, height)

    if has_features:
        try:
            features = tuple(_parse_feature(raw) for raw in obj["features"])
        except KeyError as e:
            raise DataError(f"feature entry missing field {e}") from None
        except ValueError as e:
            raise DataError(f"bad feature entry: {e}") from None
        return ManifestRecord(str(obj["id"]), width, height, None, boxes, features, line_number)

    return ManifestRecord(
        str(obj["id"]), width, height, base_dir / obj["image_path"], boxes, None, line_number
    )


def load_manifest(path: Path) -> list[ManifestRecord]:
    """Parse a JSON Lines manifest.

    Raises:
        ManifestParseError: Any invalid record, naming its line.
    """
    path = Path(path)
    records = []
    seen = set()
    for line_number, obj in read_jsonl(path):
        try:
            record = parse_record(obj, path.parent, line_number)
        except (DataError, TypeError, ValueError) as e:
            raise ManifestParseError(path, line_number, str(e)) from e
        if record.id in seen:
            raise ManifestParseError(path, line_number, f"duplicate id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records


def load_pixels(record: ManifestRecord) -> npt.NDArray[np.float64]:
    """Read the record's PGM as floats in [0, 1]."""
    if record.image_path is None:
        raise DataError(f"image {record.id}: record has no image_path")
    pixels = read_pgm(record.image_path)
    if pixels.shape != (record.height, record.width):
        raise DimensionMismatchError(
            f"image {record.id}: file is {pixels.shape[1]}x{pixels.shape[0]}, "
            f"manifest says {record.width}x{record.height}"
        )
    return pixels


def record_to_image(record: ManifestRecord, extractor: FeatureExtractor | None = None) -> BolfImage:
    """Assemble the BoLF of a record, extracting features from pixels when needed."""
    if record.features is not None:
        return assemble_bolf(record.id, record.width, record.height, features=record.features)
    if extractor is None:
        raise DataError(f"image {record.id}: pixels given but no feature extractor (model) loaded")
    return assemble_bolf(
        record.id,
        record.width,
        record.height,
        pixels=load_pixels(record),
        external_boxes=record.boxes,
        extractor=extractor,
    )


def image_to_record(image: BolfImage) -> dict:
    return {
        "id": image.id,
        "width": image.width,
        "height": image.height,
        "features": [
            {"box": opr.box.as_list(), "source": opr.source.value, "values": opr.feature.tolist()}
            for opr in image.entries
        ],
    }
