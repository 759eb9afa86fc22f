"""Choose the number of dense tiles and each tile's workload size.

The tuner walks column tiles of a column-sorted matrix, stops at the first
tile whose leading column holds at most one entry, and for every tile picks
the workload size that minimises the predicted run time.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .hardware import HardwareProfile
from .perfmodel import AnalyticPerfTable, layout_divergence, predict_time
from .transform import (ColumnSortedMatrix, Tile, build_tile_composite, enumerate_tiles,
                        sort_rows_desc, split_tiles)

PLAN_SCHEMA_VERSION = 1


class TuningError(ValueError):
    pass


def workload_bounds(tile: Tile, hw: HardwareProfile):
    """(lower, upper): the longest row, and nnz shared over every active warp."""
    if tile.nnz == 0:
        raise TuningError("cannot tune an empty tile")
    return tile.longest_row, tile.nnz // hw.max_active_total


def workload_candidates(tile: Tile, hw: HardwareProfile):
    """Multiples of the longest row between the bounds; the lower bound alone
    when the interval is empty."""
    low, up = workload_bounds(tile, hw)
    if up < low:
        return [low]
    return list(range(low, up + 1, low))


def tune_workload(tile: Tile, table, hw: HardwareProfile):
    """Return (best workload size, its predicted time); ties go to the smaller size."""
    if tile.num_rows and np.any(np.diff(tile.row_lengths) > 0):
        tile = sort_rows_desc(tile)
    best_wl, best_t = None, math.inf
    for wl in workload_candidates(tile, hw):
        t = predict_time(tile, wl, table, hw).total_time
        if t < best_t:
            best_wl, best_t = wl, t
    return best_wl, best_t


@dataclass
class TuningPlan:
    tile_width: int
    num_tiles: int
    workload_sizes: list
    predicted_times: list
    remainder_workload_size: int | None
    remainder_time: float
    divergence: list = field(default_factory=list)
    hardware: HardwareProfile = field(default_factory=HardwareProfile)
    table_fingerprint: str = ""

    @property
    def total_time(self):
        return sum(self.predicted_times) + self.remainder_time

    def to_dict(self):
        d = asdict(self)
        d["hardware"] = self.hardware.to_dict()
        d["schema_version"] = PLAN_SCHEMA_VERSION
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != PLAN_SCHEMA_VERSION:
            raise TuningError(f"unsupported plan schema {d.get('schema_version')!r}")
        d = dict(d)
        d.pop("schema_version")
        d["hardware"] = HardwareProfile.from_dict(d["hardware"])
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def build(self, m, sorted_m=None, remainder_mode="composite"):
        """Pack ``m`` following this plan."""
        return build_tile_composite(m, self.tile_width, self.workload_sizes, self.hardware,
                                    self.remainder_workload_size, self.num_tiles,
                                    remainder_mode, sorted_m)


def _tune_tiles(tiles, table, hw):
    out = []
    for t in tiles:
        t = sort_rows_desc(t)
        wl, cost = tune_workload(t, table, hw)
        out.append((t, wl, cost))
    return out


def choose_tiles(m: ColumnSortedMatrix, tile_width, table, hw: HardwareProfile,
                 uncached_table=None) -> TuningPlan:
    """Tile count and workload sizes for a column-sorted matrix.

    Dense tiles are tuned with ``table`` (cached x); the remainder with
    ``uncached_table``, falling back to ``table`` when none is given.
    """
    ranges, sparse_start = enumerate_tiles(m, tile_width)
    tiles, remainder = split_tiles(m, ranges, sparse_start)
    tuned = _tune_tiles(tiles, table, hw)
    rem_wl, rem_t = None, 0.0
    if remainder is not None and remainder.nnz:
        rem_wl, rem_t = tune_workload(sort_rows_desc(remainder), uncached_table or table, hw)
    div = [layout_divergence(t, wl, hw) for t, wl, _ in tuned]
    return TuningPlan(int(tile_width), len(tiles), [wl for _, wl, _ in tuned],
                      [c for _, _, c in tuned], rem_wl, rem_t, div, hw,
                      getattr(table, "fingerprint", ""))


# --- whole-matrix cost and exhaustive search over tile counts --------------

@dataclass(frozen=True)
class TilingCost:
    """Per-tile overheads the per-tile predictor does not see.

    Each dense tile pays ``launch`` once and ``fetch`` for every distinct x
    entry it loads into the cache; the remainder pays ``fetch`` for every
    nonzero, since nothing keeps its x entries resident.
    """

    launch: float = 128.0
    fetch: float = 64.0


def synthetic_tables(hw: HardwareProfile, upper_bound=32768):
    """(cached, uncached) analytic tables for the whole-matrix search.

    x traffic is charged explicitly by ``TilingCost``, so the uncached
    table carries no fetch term of its own.
    """
    return (AnalyticPerfTable(hw, upper_bound, "cached"),
            AnalyticPerfTable(hw, upper_bound, "uncached", fetch_cost=0.0))


def tile_count_costs(m: ColumnSortedMatrix, tile_width, table, uncached_table, hw,
                     cost: TilingCost = TilingCost(), max_tiles=None):
    """Predicted whole-matrix time for every forced tile count k = 0..K.

    K is the number of leading spans whose first column is nonempty (capped
    at ceil(n / tile_width) and ``max_tiles``). Tile k is the same span for
    every count, so tile costs are computed once; only the remainder changes.
    """
    n = m.shape[1]
    limit = math.ceil(n / tile_width)
    if max_tiles is not None:
        limit = min(limit, max_tiles)
    spans = []
    while len(spans) < limit:
        start = len(spans) * tile_width
        if m.col_lengths[start] == 0:
            break
        spans.append((start, min(start + tile_width, n)))
    tiles, _ = split_tiles(m, spans, min(len(spans) * tile_width, n))
    tile_cost = []
    for t in tiles:
        _, c = tune_workload(sort_rows_desc(t), table, hw)
        tile_cost.append(c + cost.launch + cost.fetch * np.unique(t.cols).size)
    costs = []
    prefix = 0.0
    for k in range(len(spans) + 1):
        _, rem = split_tiles(m, spans[:k], min(k * tile_width, n))
        rem_t = 0.0
        if rem is not None and rem.nnz:
            _, rem_t = tune_workload(sort_rows_desc(rem), uncached_table, hw)
            rem_t += cost.fetch * rem.nnz
        costs.append(prefix + rem_t)
        if k < len(spans):
            prefix += tile_cost[k]
    return costs


def exhaustive_num_tiles(m: ColumnSortedMatrix, tile_width, table, uncached_table, hw,
                         cost: TilingCost = TilingCost()):
    """Tile count with the lowest whole-matrix cost (smallest count on ties)."""
    costs = tile_count_costs(m, tile_width, table, uncached_table, hw, cost)
    return int(np.argmin(costs)), costs
