"""lcd-icd command-line entry point: one driver per subcommand."""

import json
import sys
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np
from tqdm import tqdm

from .autoencoder import AeModel, load_model, prepare_input, save_model, train_ae
from .bolf import MAX_EXTERNAL_BOXES, BolfImage, BoundingBox, crop_patch, unsupervised_proposals
from .change_detect import detect
from .cli import RunConfig, load_hypotheses, parse_args, write_hypotheses
from .clustering import train_ensemble
from .console import error, info, success
from .errors import DataError, LcdIcdError, UnknownReferenceError, UsageError
from .evaluation import (
    baseline_ae_locmap,
    evaluate_methods,
    format_report,
    lcd_recall,
    load_annotations,
    pool_cells,
    peak_in_box_rate,
)
from .heatmap import load_loc_dir, save_loc_map
from .manifest import load_manifest, load_pixels, record_to_image
from .map_index import Hypothesis, MapDatabase, load_map, localize, nbnn_score, save_map
from .synthetic import generate_synthetic, write_synthetic

T = TypeVar("T")
R = TypeVar("R")


def map_queries(
    fn: Callable[[T], R], items: Sequence[T], threads: int, *, desc: str = "queries", verbose: bool = False
) -> list[R]:
    """Apply ``fn`` to every item, in order, on up to ``threads`` workers."""
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    progress = tqdm(total=len(items), desc=desc, disable=not verbose)

    def step(item: T) -> R:
        result = fn(item)
        progress.update(1)
        return result

    with progress:
        if threads == 1:
            return [step(item) for item in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(step, items))


def training_patches(pixels: np.ndarray, boxes: Iterable[BoundingBox], side: int) -> list[np.ndarray]:
    """Full image plus every proposal crop, resized to side x side and flattened."""
    height, width = pixels.shape
    patches = [prepare_input(pixels, side)]
    for box in unsupervised_proposals(width, height) + list(boxes)[:MAX_EXTERNAL_BOXES]:
        patches.append(crop_patch(pixels, box, side))
    return patches


def _load_model_if_given(config: RunConfig) -> AeModel | None:
    path = config.optional_path("model")
    return load_model(path) if path is not None else None


def _load_queries(config: RunConfig) -> list[BolfImage]:
    model = _load_model_if_given(config)
    return [record_to_image(record, model) for record in load_manifest(config.path("query"))]


def run_synth(config: RunConfig) -> int:
    dataset = generate_synthetic(
        config.n_refs,
        config.n_destructors,
        config.change_rate,
        config.noise_sigma,
        config.seed,
        n_queries=config.n_queries,
        detections=config.detections,
    )
    refs, queries, annotations = write_synthetic(dataset, config.path("out"))
    changed = sum(1 for a in dataset.annotations if a.boxes)
    success(
        f"Wrote {len(dataset.references)} references, {len(dataset.queries)} queries "
        f"({changed} changed) to {config.path('out')}"
    )
    info(f"  manifests: {refs.name}, {queries.name}, {annotations.name}")
    return 0


def run_train_ae(config: RunConfig) -> int:
    records = load_manifest(config.path("input"))
    if not records:
        raise DataError(f"{config.path('input')}: manifest is empty")
    patches = []
    for record in records:
        patches += training_patches(load_pixels(record), record.boxes, config.side)
    info(f"Training AE on {len(patches)} patches from {len(records)} images ({config.side}x{config.side})...")
    model = train_ae(
        patches,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        rng_seed=config.seed,
        input_side=config.side,
        batch_size=config.batch_size,
        verbose=config.verbose,
    )
    save_model(model, config.path("out"))
    success(f"Saved model {config.path('out')} (feature dim {model.feature_dim})")
    return 0


def run_build_map(config: RunConfig) -> int:
    model = _load_model_if_given(config)
    db = MapDatabase()
    for record in tqdm(load_manifest(config.path("manifest")), desc="build-map", disable=not config.verbose):
        db.insert(record_to_image(record, model))
    if not len(db):
        raise DataError(f"{config.path('manifest')}: manifest is empty")
    save_map(db, config.path("out"))
    success(f"Saved map {config.path('out')}: {len(db)} images, {db.feature_count} features, dim {db.dim}")
    return 0


def _hypothesis_rows(db: MapDatabase, query: BolfImage, hypotheses: Sequence[Hypothesis]):
    return query.id, [(db.images[h.image_index].id, h.image_index, h.nbnn_score) for h in hypotheses]


def run_localize(config: RunConfig) -> int:
    db = load_map(config.path("map"))
    queries = _load_queries(config)
    db.index()
    results = map_queries(
        lambda q: localize(db, q, config.y, config.w_opr), queries, config.threads, desc="localize", verbose=config.verbose
    )
    rows = [_hypothesis_rows(db, q, hyps) for q, hyps in zip(queries, results)]
    write_hypotheses(config.path("out"), rows)
    for query_id, hyps in rows:
        ref, _, score = hyps[0]
        info(f"{query_id}: top-1 {ref} (nbnn {score:.6g}), {len(hyps)} hypotheses")
    success(f"Wrote {config.path('out')}")
    return 0


def _gt_hypotheses(config: RunConfig) -> dict[str, str] | None:
    path = config.optional_path("gt_annotations")
    if path is None:
        return None
    gt = {}
    for annotation in load_annotations(path):
        if annotation.reference_id is None:
            raise DataError(f"{path}: query {annotation.query_id!r} has no reference_id")
        gt[annotation.query_id] = annotation.reference_id
    return gt


def run_detect(config: RunConfig) -> int:
    if config.update_map and config.optional_path("map_out") is None:
        raise UsageError("detect: --update-map needs --map-out")
    db = load_map(config.path("map"))
    queries = _load_queries(config)
    gt = _gt_hypotheses(config)
    db.index()

    def process(query: BolfImage):
        if gt is None:
            hypotheses = localize(db, query, config.y, config.w_opr)
        else:
            if query.id not in gt:
                raise UnknownReferenceError(f"query {query.id!r} has no annotated reference")
            index = db.index_of(gt[query.id])
            hypotheses = [Hypothesis(index, nbnn_score(db, query, index, config.w_opr))]
        return hypotheses, detect(db, query, hypotheses=hypotheses)

    results = map_queries(process, queries, config.threads, desc="detect", verbose=config.verbose)

    out = config.path("out")
    rows = []
    for query, (hypotheses, loc) in zip(queries, results):
        row = _hypothesis_rows(db, query, hypotheses)
        rows.append(row)
        save_loc_map(out, query.id, loc, [ref for ref, _, _ in row[1]])
        info(
            f"{query.id}: top-1 {row[1][0][0]}, {len(hypotheses)} hypotheses, "
            f"LoC range [{loc.values.min():.4g}, {loc.values.max():.4g}]"
        )
    write_hypotheses(out / "hypotheses.jsonl", rows)

    if config.update_map:
        for query in queries:
            db.insert(query)
        save_map(db, config.path("map_out"))
        info(f"Inserted {len(queries)} queries; map now has {len(db)} images")
    success(f"Wrote {len(queries)} LoC maps to {out}")
    return 0


def run_baseline(config: RunConfig) -> int:
    feature_model = load_model(config.path("model"))
    references, features = {}, {}
    for record in load_manifest(config.path("refs")):
        pixels = load_pixels(record)
        references[record.id] = prepare_input(pixels, config.side)
        features[record.id] = feature_model.encode(prepare_input(pixels, feature_model.input_side))
    if gt_path := config.optional_path("gt_annotations"):
        matched = {a.query_id: a.reference_id for a in load_annotations(gt_path) if a.reference_id}
    else:
        # top-1 LCD hypothesis
        matched = {q: refs[0] for q, refs in load_hypotheses(config.path("hypotheses")).items() if refs}

    info(
        f"Training {config.k} AEs on {len(references)} references ({config.side}x{config.side}), "
        f"clustered on {feature_model.feature_dim}-d full-image features..."
    )
    ensemble = train_ensemble(
        references,
        features,
        config.k,
        config.seed,
        input_side=config.side,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        verbose=config.verbose,
    )

    out = config.path("out")
    queries = load_manifest(config.path("queries"))
    for record in queries:
        if record.id not in matched:
            raise UnknownReferenceError(f"query {record.id!r} has no matched reference")
        reference_id = matched[record.id]
        loc = baseline_ae_locmap(ensemble, load_pixels(record), reference_id)
        save_loc_map(out, record.id, loc, [reference_id])
        cluster = ensemble.assignment[reference_id]
        info(f"{record.id}: model {cluster} via {reference_id}, max error {loc.values.max():.4g}")
    success(f"Wrote {len(queries)} baseline LoC maps to {out}")
    return 0


def run_evaluate(config: RunConfig) -> int:
    annotations = load_annotations(config.path("annotations"))
    method_grids, peaks = {}, {}
    changed = any(a.boxes for a in annotations)
    for name, directory in config.loc_dirs:
        if name in method_grids:
            raise UsageError(f"method name {name!r} given twice")
        locs = load_loc_dir(directory)
        if not locs:
            raise DataError(f"{directory}: no LoC maps found")
        method_grids[name] = {qid: pool_cells(loc, config.cell_size) for qid, loc in locs.items()}
        if changed:
            peaks[name] = peak_in_box_rate(locs, annotations)
        info(f"{name}: {len(locs)} LoC maps from {directory}")

    report = evaluate_methods(method_grids, annotations, config.x_percents, config.iou_thresholds)
    recall = None
    if hyp_path := config.optional_path("hypotheses"):
        recall = lcd_recall(load_hypotheses(hyp_path), annotations, config.recall_ks)

    out = config.path("out")
    out.mkdir(parents=True, exist_ok=True)
    document = {
        "accuracy": report,
        "cell_size": config.cell_size,
        "iou_thresholds": list(config.iou_thresholds),
        "lcd_recall": {str(k): v for k, v in recall.items()} if recall else None,
        "n_objects": sum(len(a.boxes) for a in annotations),
        "peak_in_box": peaks or None,
        "x_percents": list(config.x_percents),
    }
    (out / "report.json").write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    text = format_report(report, recall, peaks)
    (out / "report.txt").write_text(text, encoding="utf-8")
    success(f"Wrote {out / 'report.json'} and {out / 'report.txt'}")
    return 0


DRIVERS: dict[str, Callable[[RunConfig], int]] = {
    "synth": run_synth,
    "train-ae": run_train_ae,
    "build-map": run_build_map,
    "localize": run_localize,
    "detect": run_detect,
    "baseline": run_baseline,
    "evaluate": run_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        config = RunConfig.from_namespace(args)
        return DRIVERS[config.command](config)
    except KeyboardInterrupt:
        error("Interrupted")
        return 1
    except LcdIcdError as e:
        error(f"Error: {e}")
        return e.exit_code
    except OSError as e:
        error(f"Error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
