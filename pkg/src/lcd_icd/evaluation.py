"""Top-X accuracy on cell grids, the AE reconstruction baseline, and LCD recall.

Cells of all query images are ranked together by their max-pooled LoC; an
annotated changed object counts as detected when the top X percent of cells
cover enough of its box.
"""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .autoencoder import prepare_input, reconstruction_error_map
from .bolf import BoundingBox
from .change_detect import LocMap
from .clustering import AeEnsemble
from .errors import DataError, ManifestParseError, UsageError
from .manifest import read_jsonl

DEFAULT_CELL_SIZE = 10
DEFAULT_X_PERCENTS = (5.0, 10.0, 15.0, 20.0)
DEFAULT_IOU_THRESHOLDS = (0.5, 0.25)

COVERAGE = "coverage"
STRICT_IOU = "iou"


@dataclass(frozen=True)
class Annotation:
    query_id: str
    boxes: tuple[BoundingBox, ...]
    reference_id: str | None = None


def load_annotations(path: Path) -> list[Annotation]:
    """Read ``{"query_id", "boxes", "reference_id"?}`` JSON Lines records."""
    path = Path(path)
    annotations = []
    for line_number, obj in read_jsonl(path):
        try:
            boxes = tuple(BoundingBox.from_list(b) for b in obj.get("boxes", []))
            annotations.append(Annotation(str(obj["query_id"]), boxes, obj.get("reference_id")))
        except KeyError as e:
            raise ManifestParseError(path, line_number, f"missing field {e}") from None
        except (DataError, TypeError, ValueError) as e:
            raise ManifestParseError(path, line_number, str(e)) from e
    return annotations


def annotation_to_record(annotation: Annotation) -> dict:
    return {
        "query_id": annotation.query_id,
        "reference_id": annotation.reference_id,
        "boxes": [box.as_list() for box in annotation.boxes],
    }


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Max-pooled LoC per grid cell; edge cells may be narrower than cell_size."""

    cell_size: int
    cells: npt.NDArray[np.float64]
    width: int
    height: int

    def pixel_mask(self, selected: npt.NDArray[np.bool_]) -> npt.NDArray[np.bool_]:
        """Expand a per-cell boolean selection to a (height, width) pixel mask."""
        rows = np.arange(self.height) // self.cell_size
        cols = np.arange(self.width) // self.cell_size
        return selected[np.ix_(rows, cols)]


def pool_cells(loc: LocMap, cell_size: int = DEFAULT_CELL_SIZE) -> CellGrid:
    """Impose a cell_size grid on the map and keep each cell's maximum."""
    if cell_size < 1:
        raise UsageError(f"cell size must be >= 1, got {cell_size}")
    row_starts = np.arange(0, loc.height, cell_size)
    col_starts = np.arange(0, loc.width, cell_size)
    cells = np.maximum.reduceat(np.maximum.reduceat(loc.values, row_starts, axis=0), col_starts, axis=1)
    return CellGrid(cell_size, cells, loc.width, loc.height)


def selection_count(total_cells: int, x_percent: float) -> int:
    """ceil(X/100 * total), computed exactly."""
    return math.ceil(Fraction(str(x_percent)) * total_cells / 100)


def select_top_cells(grids: Mapping[str, CellGrid], x_percent: float) -> dict[str, npt.NDArray[np.bool_]]:
    """Per-query boolean cell masks of the globally top X percent cells.

    Cells are ordered by descending score, ties by (query_id, row, col).
    """
    if not 0 < x_percent <= 100:
        raise UsageError(f"X must be in (0, 100], got {x_percent}")
    ids = sorted(grids)
    scores, owners, rows, cols = [], [], [], []
    for ordinal, query_id in enumerate(ids):
        cells = grids[query_id].cells
        r, c = np.indices(cells.shape)
        scores.append(cells.ravel())
        owners.append(np.full(cells.size, ordinal))
        rows.append(r.ravel())
        cols.append(c.ravel())
    scores, owners = np.concatenate(scores), np.concatenate(owners)
    rows, cols = np.concatenate(rows), np.concatenate(cols)

    # last key is primary
    order = np.lexsort((cols, rows, owners, -scores))
    chosen = order[:selection_count(len(order), x_percent)]

    masks = {query_id: np.zeros(grids[query_id].cells.shape, dtype=bool) for query_id in ids}
    for k in chosen:
        masks[ids[owners[k]]][rows[k], cols[k]] = True
    return masks


def box_coverage(box: BoundingBox, selected: npt.NDArray[np.bool_]) -> float:
    return float(selected[box.y0:box.y1, box.x0:box.x1].sum()) / box.area


def box_iou(box: BoundingBox, selected: npt.NDArray[np.bool_]) -> float:
    """Intersection over union of the box and the selected pixel set."""
    inter = float(selected[box.y0:box.y1, box.x0:box.x1].sum())
    union = box.area + float(selected.sum()) - inter
    return inter / union


def top_x_accuracy(
    grids: Mapping[str, CellGrid],
    annotations: Sequence[Annotation],
    x_percent: float,
    iou_threshold: float,
    *,
    strict_iou: bool = False,
) -> float:
    """Fraction of annotated objects covered by the top X percent of cells.

    Args:
        grids: Query id -> cell grid.
        annotations: Changed-object boxes per query; queries without boxes
            contribute cells but no objects.
        x_percent: Percentage of all cells to select, in (0, 100].
        iou_threshold: Minimum coverage (or IoU) for a detection.
        strict_iou: Use IoU against the image's selected-cell union instead of
            box coverage.

    Raises:
        DataError: No annotated objects, or an annotated query has no grid.
    """
    total = sum(len(a.boxes) for a in annotations)
    if total == 0:
        raise DataError("no annotated changed objects to evaluate")
    for annotation in annotations:
        if annotation.boxes and annotation.query_id not in grids:
            raise DataError(f"no LoC map for annotated query {annotation.query_id!r}")

    masks = select_top_cells(grids, x_percent)
    measure = box_iou if strict_iou else box_coverage
    detected = 0
    for annotation in annotations:
        if not annotation.boxes:
            continue
        grid = grids[annotation.query_id]
        selected = grid.pixel_mask(masks[annotation.query_id])
        for box in annotation.boxes:
            box.check_within(grid.width, grid.height)
            if measure(box, selected) >= iou_threshold:
                detected += 1
    return detected / total


def baseline_ae_locmap(
    ensemble: AeEnsemble,
    query_pixels: npt.ArrayLike,
    matched_reference_id: str,
) -> LocMap:
    """Reconstruction-error LoC through the AE of the matched reference's cluster.

    Raises:
        UnknownReferenceError: The reference is not in the ensemble.
    """
    model = ensemble.model_for(matched_reference_id)
    pixels = np.asarray(query_pixels, dtype=np.float64)
    height, width = pixels.shape
    error = reconstruction_error_map(model, prepare_input(pixels, model.input_side), width, height)
    return LocMap(width, height, error)


def peak_in_box(loc: LocMap, boxes: Sequence[BoundingBox]) -> bool:
    """True when every pixel attaining the map's maximum lies inside one of ``boxes``."""
    peak = loc.values == loc.values.max()
    inside = np.zeros_like(peak)
    for box in boxes:
        box.check_within(loc.width, loc.height)
        inside[box.y0:box.y1, box.x0:box.x1] = True
    return bool(not (peak & ~inside).any())


def peak_in_box_rate(locs: Mapping[str, LocMap], annotations: Sequence[Annotation]) -> float:
    """Share of changed queries whose LoC peak lies only inside the annotated change.

    Raises:
        DataError: No annotated change, or a changed query without a map.
    """
    changed = [a for a in annotations if a.boxes]
    if not changed:
        raise DataError("no annotated changes to score peaks against")
    hits = 0
    for annotation in changed:
        if annotation.query_id not in locs:
            raise DataError(f"no LoC map for query {annotation.query_id!r}")
        hits += peak_in_box(locs[annotation.query_id], annotation.boxes)
    return hits / len(changed)


def lcd_recall(
    hypotheses: Mapping[str, Sequence[str]],
    annotations: Sequence[Annotation],
    ks: Sequence[int],
) -> dict[int, float]:
    """Recall@K of the annotated GT reference among each query's ranked hypotheses.

    Raises:
        DataError: No annotated query has both a reference id and hypotheses.
    """
    scored = [
        (hypotheses[a.query_id], a.reference_id)
        for a in annotations
        if a.reference_id is not None and a.query_id in hypotheses
    ]
    if not scored:
        raise DataError("no queries with both a GT reference and hypotheses")
    return {
        k: sum(ref in ranked[:k] for ranked, ref in scored) / len(scored)
        for k in ks
    }


def evaluate_methods(
    method_grids: Mapping[str, Mapping[str, CellGrid]],
    annotations: Sequence[Annotation],
    x_percents: Sequence[float] = DEFAULT_X_PERCENTS,
    thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
) -> dict:
    """Accuracy table under both criteria.

    Returns:
        {criterion: {method: {threshold: {x: accuracy}}}} with string keys so
        the result serializes to JSON unchanged.
    """
    report = {}
    for criterion in (COVERAGE, STRICT_IOU):
        report[criterion] = {
            method: {
                str(t): {
                    str(x): top_x_accuracy(grids, annotations, x, t, strict_iou=criterion == STRICT_IOU)
                    for x in x_percents
                }
                for t in thresholds
            }
            for method, grids in method_grids.items()
        }
    return report


def format_report(
    report: dict,
    recall: Mapping[int, float] | None = None,
    peaks: Mapping[str, float] | None = None,
) -> str:
    """Fixed-width table: X rows, one column group per threshold, one column per method."""
    lines = []
    for criterion, methods in report.items():
        names = list(methods)
        if not names:
            continue
        thresholds = list(methods[names[0]])
        xs = list(methods[names[0]][thresholds[0]])
        lines.append(f"criterion: {criterion}")
        head = "top-X  " + " | ".join(
            f"{'>=' + format(float(t) * 100, 'g') + '%':^{9 * len(names)}}" for t in thresholds
        )
        sub = "       " + " | ".join("".join(f"{n:>9}" for n in names) for _ in thresholds)
        lines += [head, sub]
        for x in xs:
            cells = " | ".join(
                "".join(f"{methods[n][t][x] * 100:>9.1f}" for n in names) for t in thresholds
            )
            lines.append(f"{format(float(x), 'g') + '%':<7}" + cells)
        lines.append("")
    if recall:
        lines.append("LCD recall@K")
        lines += [f"  K={k:<3} {v * 100:6.1f}" for k, v in recall.items()]
        lines.append("")
    if peaks:
        lines.append("LoC peak inside the changed box")
        lines += [f"  {name:<9} {v * 100:6.1f}" for name, v in peaks.items()]
        lines.append("")
    return "\n".join(lines)
