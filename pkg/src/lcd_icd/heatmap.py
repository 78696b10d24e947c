"""LoC map files: 16-bit PGM heatmap, exact CSV raster and JSON sidecar."""

import json
from collections.abc import Sequence
from pathlib import Path

import numpy as np

from .change_detect import LocMap
from .errors import DataError
from .pnm import write_pgm

PGM_MAX = 65535


def scale_to_uint16(values: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    """Affine map of values onto [0, 65535].

    Returns:
        (raster, min, max, scale) with raster = round((v - min) * scale).
        A constant map scales to all zeros with scale 0.
    """
    lo, hi = float(values.min()), float(values.max())
    scale = PGM_MAX / (hi - lo) if hi > lo else 0.0
    raster = np.clip(np.rint((values - lo) * scale), 0, PGM_MAX).astype(np.uint16)
    return raster, lo, hi, scale


def save_loc_map(
    out_dir: Path,
    query_id: str,
    loc: LocMap,
    hypotheses: Sequence[str] = (),
) -> Path:
    """Write ``<id>.pgm``, ``<id>.csv`` and ``<id>.json`` into ``out_dir``.

    Returns:
        Path of the PGM heatmap.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raster, lo, hi, scale = scale_to_uint16(loc.values)
    pgm_path = out_dir / f"{query_id}.pgm"
    write_pgm(pgm_path, raster)
    np.savetxt(out_dir / f"{query_id}.csv", loc.values, fmt="%.17g", delimiter=",")
    meta = {
        "query_id": query_id,
        "width": loc.width,
        "height": loc.height,
        "min": lo,
        "max": hi,
        "scale": scale,
        "hypotheses": list(hypotheses),
    }
    (out_dir / f"{query_id}.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return pgm_path


def load_loc_map(csv_path: Path) -> LocMap:
    """Read a LoC raster back from its CSV."""
    csv_path = Path(csv_path)
    try:
        values = np.loadtxt(csv_path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise DataError(f"{csv_path}: malformed LoC CSV ({e})") from e
    if values.size == 0:
        raise DataError(f"{csv_path}: empty LoC raster")
    height, width = values.shape
    return LocMap(width, height, values)


def load_loc_dir(loc_dir: Path) -> dict[str, LocMap]:
    """All LoC maps in a directory, keyed by query id (the CSV stem)."""
    loc_dir = Path(loc_dir)
    if not loc_dir.is_dir():
        raise FileNotFoundError(f"LoC directory not found: {loc_dir}")
    return {path.stem: load_loc_map(path) for path in sorted(loc_dir.glob("*.csv"))}
