"""Likelihood-of-change (LoC) maps from retrieval ranks.

Each query OPR is used as a retrieval query against the whole map. The rank at
which a reference image's OPRs show up in that list scores how much the OPR
disagrees with the reference. Ranks of all OPRs covering a pixel are fused by
their harmonic mean, and maps from several viewpoint hypotheses are combined
by a pixel-wise minimum. Larger values mean more likely changed; 1 is the
minimum.
"""

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .bolf import BolfImage
from .errors import DimensionMismatchError, NoCoverageError, UsageError
from .map_index import (
    DEFAULT_W_OPR,
    DEFAULT_Y,
    Hypothesis,
    MapDatabase,
    RankedList,
    localize,
    rank_features,
)


@dataclass(frozen=True)
class OprRank:
    query_opr_index: int
    rank: int


@dataclass(frozen=True, eq=False)
class LocMap:
    width: int
    height: int
    values: npt.NDArray[np.float64]
    hypothesis_id: int | None = None

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise DimensionMismatchError(
                f"LoC raster {self.values.shape} != ({self.height}, {self.width})"
            )


def opr_rank(db: MapDatabase, ranked: RankedList, ref_image_index: int) -> int:
    """Best (smallest) 1-based position of any of the reference's OPRs in ``ranked``."""
    offsets = db.index().offsets
    start, stop = offsets[ref_image_index], offsets[ref_image_index + 1]
    assert stop > start, "reference image has no features"
    return int(ranked.positions[start:stop].min())


def fuse_pixel(ranks: Iterable[int]) -> float:
    """Harmonic mean of the ranks of all OPRs covering one pixel.

    Raises:
        NoCoverageError: No OPR covers the pixel.
    """
    ranks = list(ranks)
    if not ranks:
        raise NoCoverageError("pixel not covered by any OPR")
    return len(ranks) / math.fsum(1.0 / r for r in ranks)


def query_rankings(db: MapDatabase, query: BolfImage) -> list[RankedList]:
    """One ranked list per query entry (full image first)."""
    return [rank_features(db, opr.feature) for opr in query.entries]


def opr_ranks(
    db: MapDatabase,
    query: BolfImage,
    ref_index: int,
    rankings: Sequence[RankedList] | None = None,
) -> list[OprRank]:
    if rankings is None:
        rankings = query_rankings(db, query)
    return [OprRank(j, opr_rank(db, ranked, ref_index)) for j, ranked in enumerate(rankings)]


def loc_map_for_hypothesis(
    db: MapDatabase,
    query: BolfImage,
    ref_index: int,
    rankings: Sequence[RankedList] | None = None,
) -> LocMap:
    """Pixel-wise LoC of ``query`` assuming reference ``ref_index`` is the true viewpoint.

    Every OPR contributes its rank uniformly over its box. The image is split
    along all box edges into blocks of identical coverage; each block is fused
    once.
    """
    ranks = opr_ranks(db, query, ref_index, rankings)
    boxes = [opr.box for opr in query.entries]
    # block edges
    xs = sorted({0, query.width, *(b.x0 for b in boxes), *(b.x1 for b in boxes)})
    ys = sorted({0, query.height, *(b.y0 for b in boxes), *(b.y1 for b in boxes)})

    values = np.empty((query.height, query.width), dtype=np.float64)
    for y0, y1 in zip(ys[:-1], ys[1:]):
        for x0, x1 in zip(xs[:-1], xs[1:]):
            covering = [r.rank for r, box in zip(ranks, boxes) if box.contains(x0, y0)]
            values[y0:y1, x0:x1] = fuse_pixel(covering)
    return LocMap(query.width, query.height, values, ref_index)


def min_pool_hypotheses(maps: Sequence[LocMap]) -> LocMap:
    """Pixel-wise minimum over hypothesis maps.

    Raises:
        UsageError: No maps given.
        DimensionMismatchError: Maps differ in size.
    """
    if not maps:
        raise UsageError("need at least one LoC map to pool")
    width, height = maps[0].width, maps[0].height
    for loc in maps:
        if (loc.width, loc.height) != (width, height):
            raise DimensionMismatchError(
                f"LoC map {loc.width}x{loc.height} != {width}x{height}"
            )
    # a pixel is only as changed as its most favourable hypothesis says
    pooled = np.minimum.reduce([loc.values for loc in maps])
    hypothesis_id = maps[0].hypothesis_id if len(maps) == 1 else None
    return LocMap(width, height, pooled, hypothesis_id)


def detect(
    db: MapDatabase,
    query: BolfImage,
    y: int = DEFAULT_Y,
    w_opr: float = DEFAULT_W_OPR,
    *,
    hypotheses: Sequence[Hypothesis] | None = None,
) -> LocMap:
    """Simultaneous loop-closure and change detection for one query.

    Localizes the top-Y viewpoint hypotheses (unless ``hypotheses`` is given),
    builds one LoC map per hypothesis and min-pools them.
    """
    if hypotheses is None:
        hypotheses = localize(db, query, y, w_opr)
    rankings = query_rankings(db, query)
    maps = [loc_map_for_hypothesis(db, query, h.image_index, rankings) for h in hypotheses]
    return min_pool_hypotheses(maps)
