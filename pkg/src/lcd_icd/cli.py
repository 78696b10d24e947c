"""Command-line parsing, run configuration and small file loaders."""

import argparse
import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .autoencoder import (
    BASELINE_SIDE,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    FEATURE_SIDE,
)
from .clustering import DEFAULT_K
from .errors import ManifestParseError, UsageError
from .evaluation import DEFAULT_CELL_SIZE, DEFAULT_IOU_THRESHOLDS, DEFAULT_X_PERCENTS
from .manifest import read_jsonl, write_jsonl
from .map_index import DEFAULT_W_OPR, DEFAULT_Y
from .synthetic import (
    DEFAULT_CHANGE_RATE,
    DEFAULT_N_DESTRUCTORS,
    DEFAULT_N_QUERIES,
    DEFAULT_N_REFS,
    DEFAULT_NOISE_SIGMA,
)

COMMANDS = ("synth", "train-ae", "build-map", "localize", "detect", "baseline", "evaluate")
DEFAULT_RECALL_KS = (1, 5, 10)

# arguments that name files or directories
PATH_ARGS = (
    "input",
    "manifest",
    "model",
    "map",
    "query",
    "refs",
    "queries",
    "annotations",
    "gt_annotations",
    "hypotheses",
    "map_out",
    "out",
)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable a subcommand driver reads, with the published defaults."""

    command: str
    paths: Mapping[str, Path] = field(default_factory=dict)
    seed: int = 0
    y: int = DEFAULT_Y
    w_opr: float = DEFAULT_W_OPR
    cell_size: int = DEFAULT_CELL_SIZE
    x_percents: tuple[float, ...] = DEFAULT_X_PERCENTS
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_ks: tuple[int, ...] = DEFAULT_RECALL_KS
    k: int = DEFAULT_K
    threads: int = 1
    side: int = FEATURE_SIDE
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    n_refs: int = DEFAULT_N_REFS
    n_destructors: int = DEFAULT_N_DESTRUCTORS
    n_queries: int = DEFAULT_N_QUERIES
    change_rate: float = DEFAULT_CHANGE_RATE
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    loc_dirs: tuple[tuple[str, Path], ...] = ()
    update_map: bool = False
    detections: bool = False
    verbose: bool = False

    @classmethod
    def from_namespace(cls, args: argparse.Namespace) -> "RunConfig":
        paths = {name: Path(getattr(args, name)) for name in PATH_ARGS if getattr(args, name, None)}
        values = {
            name: getattr(args, name)
            for name in cls.__dataclass_fields__
            if name not in ("command", "paths", "loc_dirs") and getattr(args, name, None) is not None
        }
        loc_dirs = tuple(parse_named_dir(text) for text in getattr(args, "loc_dir", None) or ())
        return cls(command=args.command, paths=paths, loc_dirs=loc_dirs, **values)

    def path(self, name: str) -> Path:
        """The path given for ``--name``; raises UsageError if it was omitted."""
        try:
            return self.paths[name]
        except KeyError:
            raise UsageError(f"{self.command}: --{name.replace('_', '-')} is required") from None

    def optional_path(self, name: str) -> Path | None:
        return self.paths.get(name)


def parse_float_list(text: str) -> tuple[float, ...]:
    """Parse "5,10,15,20" into floats; blanks are ignored."""
    try:
        values = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def parse_named_dir(text: str) -> tuple[str, Path]:
    """Parse "NAME=DIR"; a bare DIR is named after its last component."""
    name, sep, directory = text.partition("=")
    if not sep:
        path = Path(text)
        return path.name or str(path), path
    if not name or not directory:
        raise UsageError(f"expected NAME=DIR, got {text!r}")
    return name, Path(directory)


def load_hypotheses(path: Path) -> dict[str, list[str]]:
    """Query id -> ranked reference ids from a hypotheses.jsonl file."""
    path = Path(path)
    ranked = {}
    for line_number, obj in read_jsonl(path):
        try:
            ranked[str(obj["query_id"])] = [str(h["reference_id"]) for h in obj["hypotheses"]]
        except (KeyError, TypeError) as e:
            raise ManifestParseError(path, line_number, f"bad hypotheses record ({e})") from None
    return ranked


def write_hypotheses(path: Path, rows: Sequence[tuple[str, Sequence[tuple[str, int, float]]]]) -> None:
    """Write (query_id, [(reference_id, image_index, nbnn_score), ...]) rows."""
    write_jsonl(
        path,
        (
            {
                "query_id": query_id,
                "hypotheses": [
                    {"reference_id": ref, "image_index": index, "nbnn_score": score}
                    for ref, index, score in hypotheses
                ],
            }
            for query_id, hypotheses in rows
        ),
    )


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_retrieval_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--map", required=True, metavar="FILE", help="Map written by build-map")
    parser.add_argument(
        "--model",
        metavar="FILE",
        help="Feature AE; required when the query manifest has pixels rather than features",
    )
    parser.add_argument("--query", required=True, metavar="FILE", help="Query manifest (JSON Lines)")
    parser.add_argument(
        "--Y", dest="y", type=int, default=DEFAULT_Y, metavar="N",
        help=f"Viewpoint hypotheses per query (default: {DEFAULT_Y})",
    )
    parser.add_argument(
        "--w-opr", type=float, default=DEFAULT_W_OPR, metavar="W",
        help=f"Weight of the local-OPR term in the NBNN score (default: {DEFAULT_W_OPR:g})",
    )
    parser.add_argument(
        "--threads", type=int, default=1, metavar="N",
        help="Queries processed in parallel; outputs do not depend on it (default: 1)",
    )


def _add_training_args(parser: argparse.ArgumentParser, side: int) -> None:
    parser.add_argument("--side", type=int, default=side, metavar="PX", help=f"Square AE input side (default: {side})")
    parser.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS, help=f"Training epochs (default: {DEFAULT_EPOCHS})")
    parser.add_argument(
        "--lr", dest="learning_rate", type=float, default=DEFAULT_LEARNING_RATE,
        help=f"SGD learning rate (default: {DEFAULT_LEARNING_RATE})",
    )
    parser.add_argument(
        "--batch-size", type=int, default=DEFAULT_BATCH_SIZE,
        help=f"Mini-batch size (default: {DEFAULT_BATCH_SIZE})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lcd-icd",
        description="Simultaneous loop-closure and image change detection by rank-based OPR retrieval",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s synth --seed 7 --detections --out data/
  %(prog)s train-ae --input data/refs.jsonl --side 32 --epochs 200 --out model.bin
  %(prog)s build-map --manifest data/refs.jsonl --model model.bin --out map.jsonl
  %(prog)s localize --map map.jsonl --model model.bin --query data/queries.jsonl --out hyps.jsonl
  %(prog)s detect --map map.jsonl --model model.bin --query data/queries.jsonl --Y 10 --out loc/
  %(prog)s baseline --refs data/refs.jsonl --queries data/queries.jsonl \\
      --hypotheses loc/hypotheses.jsonl --k 10 --model model.bin --out ae_loc/
  %(prog)s evaluate --loc-dir lcd=loc/ --loc-dir ae=ae_loc/ \\
      --annotations data/annotations.jsonl --X 5,10,15,20 --iou 0.5,0.25 --out report/

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Show training progress bars")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", help="Generate the synthetic benchmark")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-refs", type=int, default=DEFAULT_N_REFS, help=f"(default: {DEFAULT_N_REFS})")
    p.add_argument(
        "--n-destructors", type=int, default=DEFAULT_N_DESTRUCTORS,
        help=f"Distractor references (default: {DEFAULT_N_DESTRUCTORS})",
    )
    p.add_argument("--n-queries", type=int, default=DEFAULT_N_QUERIES, help=f"(default: {DEFAULT_N_QUERIES})")
    p.add_argument(
        "--change-rate", type=float, default=DEFAULT_CHANGE_RATE,
        help=f"Probability a query has one changed object (default: {DEFAULT_CHANGE_RATE})",
    )
    p.add_argument(
        "--noise-sigma", type=float, default=DEFAULT_NOISE_SIGMA,
        help=f"Gaussian pixel noise on queries (default: {DEFAULT_NOISE_SIGMA})",
    )
    p.add_argument(
        "--detections", action="store_true",
        help="List detector-like boxes (one per object, edges jittered inward) in the manifests",
    )

    p = sub.add_parser("train-ae", help="Train the feature autoencoder on a manifest's images and crops")
    p.add_argument("--input", required=True, metavar="FILE", help="Image manifest")
    p.add_argument("--out", required=True, metavar="FILE", help="Model file to write")
    p.add_argument("--seed", type=int, default=0)
    _add_training_args(p, FEATURE_SIDE)

    p = sub.add_parser("build-map", help="Extract BoLFs of the reference images and save the map")
    p.add_argument("--manifest", required=True, metavar="FILE")
    p.add_argument("--model", metavar="FILE", help="Feature AE (not needed for precomputed features)")
    p.add_argument("--out", required=True, metavar="FILE")

    p = sub.add_parser("localize", help="Top-Y viewpoint hypotheses per query")
    _add_retrieval_args(p)
    p.add_argument("--out", required=True, metavar="FILE", help="hypotheses.jsonl to write")

    p = sub.add_parser("detect", help="LoC heatmaps per query")
    _add_retrieval_args(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument(
        "--gt-annotations", metavar="FILE",
        help="Use each query's annotated reference as the only hypothesis",
    )
    p.add_argument(
        "--update-map", action="store_true",
        help="Insert the processed queries into the map and save it to --map-out",
    )
    p.add_argument("--map-out", metavar="FILE")

    p = sub.add_parser("baseline", help="AE reconstruction-error LoC maps with a k-means AE ensemble")
    p.add_argument("--refs", required=True, metavar="FILE", help="Reference manifest with pixels")
    p.add_argument("--queries", required=True, metavar="FILE", help="Query manifest with pixels")
    p.add_argument(
        "--model", required=True, metavar="FILE",
        help="Feature AE whose full-image features are clustered",
    )
    p.add_argument("--k", type=int, default=DEFAULT_K, help=f"Clusters / AEs (default: {DEFAULT_K})")
    p.add_argument("--seed", type=int, default=0)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--hypotheses", metavar="FILE", help="Pick each model from the top-1 hypothesis")
    group.add_argument("--gt-annotations", metavar="FILE", help="Pick each model from the annotated reference")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_training_args(p, BASELINE_SIDE)

    p = sub.add_parser("evaluate", help="Top-X accuracy report over one or more LoC directories")
    p.add_argument(
        "--loc-dir", action="append", required=True, metavar="NAME=DIR",
        help="LoC output directory; repeat to compare methods",
    )
    p.add_argument("--annotations", required=True, metavar="FILE")
    p.add_argument(
        "--X", dest="x_percents", type=parse_float_list, default=DEFAULT_X_PERCENTS, metavar="LIST",
        help="Percent of cells selected (default: 5,10,15,20)",
    )
    p.add_argument(
        "--iou", dest="iou_thresholds", type=parse_float_list, default=DEFAULT_IOU_THRESHOLDS,
        metavar="LIST", help="Coverage thresholds (default: 0.5,0.25)",
    )
    p.add_argument("--cell-size", type=int, default=DEFAULT_CELL_SIZE, help=f"(default: {DEFAULT_CELL_SIZE})")
    p.add_argument("--hypotheses", metavar="FILE", help="Also report LCD recall@K from this file")
    p.add_argument(
        "--recall-k", dest="recall_ks", type=parse_int_list, default=DEFAULT_RECALL_KS,
        metavar="LIST", help="K values for recall (default: 1,5,10)",
    )
    p.add_argument("--out", required=True, metavar="DIR")
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
