"""Shape-indexed throughput tables and the per-tile runtime predictor.

A table maps a padded workload shape (w, h) to the throughput one warp
achieves on it, in padded slots per second. ``predict_time`` walks a
length-sorted tile the way the tuner partitions it, groups warps into
occupancy-limited iterations and sums each iteration's padded size over
its mean throughput.
"""

from __future__ import annotations

import gc
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .hardware import HardwareProfile
from .transform import (COL_MAJOR, ROW_MAJOR, PackedTile, Tile, Workload, layout_storage,
                        pack_boundaries, workload_shape)

SCHEMA_VERSION = 1
DEFAULT_UPPER_BOUND = 32768
MODES = ("cached", "uncached")


class TableError(RuntimeError):
    pass


class TableHoleError(TableError, KeyError):
    def __init__(self, w, h):
        self.shape = (w, h)
        super().__init__(f"performance table has no entry for shape (w={w}, h={h})")

    def __str__(self):
        return self.args[0]


class WorkloadBoundError(ValueError):
    pass


def admissible(w, h, warp_size, upper_bound):
    return w >= 1 and h >= 1 and w * h <= upper_bound and (w % warp_size == 0 or h % warp_size == 0)


def admissible_shapes(warp_size, upper_bound):
    """Every (w, h) with w*h <= upper_bound and w or h a warp multiple."""
    out = set()
    for a in range(warp_size, upper_bound + 1, warp_size):
        for b in range(1, upper_bound // a + 1):
            out.add((a, b))
            out.add((b, a))
    return sorted(out)


def benchmark_order(w, h, warp_size):
    """Storage order that realises (w, h) without extra padding."""
    if w % warp_size == 0 and (w >= h or h % warp_size != 0):
        return ROW_MAJOR
    return COL_MAJOR


# --- tables ----------------------------------------------------------------

@dataclass
class PerfTable:
    """Measured table: explicit (w, h) -> throughput entries."""

    hardware: HardwareProfile
    upper_bound: int
    mode: str = "cached"
    entries: dict = field(default_factory=dict)
    invalid: set = field(default_factory=set)
    timestamp: str | None = None
    kind = "measured"

    @property
    def fingerprint(self):
        return self.hardware.fingerprint()

    @property
    def usable(self):
        return not self.invalid

    def lookup(self, w, h):
        if self.invalid:
            raise TableError(f"table has {len(self.invalid)} invalid entries; rebuild it")
        try:
            return self.entries[(w, h)]
        except KeyError:
            raise TableHoleError(w, h) from None

    def domain(self):
        return admissible_shapes(self.hardware.warp_size, self.upper_bound)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "mode": self.mode,
            "upper_bound": self.upper_bound,
            "hardware": self.hardware.to_dict(),
            "fingerprint": self.fingerprint,
            "timestamp": self.timestamp,
            "invalid": sorted([list(s) for s in self.invalid]),
            "entries": [[w, h, thr] for (w, h), thr in sorted(self.entries.items())],
        }


@dataclass
class AnalyticPerfTable:
    """Closed-form table for reproducible runs.

    For s = w*h slots and warp size W::

        base(w, h)   = peak * s / (s + half_size)
        row-major    : base * (w / W) / (w / W + log2 W)   # lane tree per row
        column-major : base
        uncached     : 1 / (1 / cached + fetch_cost)        # one global fetch per slot

    Shapes outside the admissible domain are holes, as in a measured table.
    """

    hardware: HardwareProfile
    upper_bound: int = DEFAULT_UPPER_BOUND
    mode: str = "cached"
    peak: float = 1.0
    half_size: float = 64.0
    fetch_cost: float = 4.0
    kind = "analytic"
    timestamp = None
    usable = True

    @property
    def fingerprint(self):
        return self.hardware.fingerprint(host=False)

    def lookup(self, w, h):
        W = self.hardware.warp_size
        if not admissible(w, h, W, self.upper_bound):
            raise TableHoleError(w, h)
        return self.throughput(w, h)

    def throughput(self, w, h):
        W = self.hardware.warp_size
        s = w * h
        thr = self.peak * s / (s + self.half_size)
        if benchmark_order(w, h, W) == ROW_MAJOR:
            strides = w / W
            thr *= strides / (strides + math.log2(W))
        if self.mode == "uncached":
            thr = 1.0 / (1.0 / thr + self.fetch_cost)
        return thr

    def domain(self):
        return admissible_shapes(self.hardware.warp_size, self.upper_bound)

    def materialize(self) -> PerfTable:
        entries = {(w, h): self.throughput(w, h) for w, h in self.domain()}
        return PerfTable(self.hardware, self.upper_bound, self.mode, entries)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "mode": self.mode,
            "upper_bound": self.upper_bound,
            "hardware": self.hardware.to_dict(),
            "fingerprint": self.fingerprint,
            "params": {"peak": self.peak, "half_size": self.half_size,
                       "fetch_cost": self.fetch_cost},
        }


def table_to_json(table):
    return json.dumps(table.to_dict(), indent=1, sort_keys=True)


def table_from_dict(d):
    if d.get("schema_version") != SCHEMA_VERSION:
        raise TableError(f"unsupported table schema {d.get('schema_version')!r}")
    hw = HardwareProfile.from_dict(d["hardware"])
    if d["kind"] == "analytic":
        return AnalyticPerfTable(hw, d["upper_bound"], d["mode"], **d["params"])
    entries = {(int(w), int(h)): float(t) for w, h, t in d["entries"]}
    invalid = {tuple(s) for s in d.get("invalid", [])}
    return PerfTable(hw, d["upper_bound"], d["mode"], entries, invalid, d.get("timestamp"))


def save_table(table, path):
    with open(path, "w") as fh:
        fh.write(table_to_json(table))


def load_table(path, hw: HardwareProfile | None = None, force=False):
    """Read a table; refuse one recorded for different hardware unless forced."""
    with open(path) as fh:
        d = json.load(fh)
    table = table_from_dict(d)
    if hw is not None and not force:
        expected = hw.fingerprint(host=table.kind != "analytic")
        if d.get("fingerprint") != expected:
            raise TableError(
                f"table fingerprint {d.get('fingerprint')} does not match this hardware "
                f"({expected}); pass force to use it anyway")
    return table


# --- measured tables -------------------------------------------------------

def uniform_packed_tile(w, h, count, hw: HardwareProfile, x_span, seed=0, order=None) -> PackedTile:
    """A tile of ``count`` identical w x h workloads with no padding slots.

    Column indices are drawn uniformly from [0, x_span).
    """
    rng = np.random.default_rng(seed)
    order = order or benchmark_order(w, h, hw.warp_size)
    n_rows = count * h
    n = n_rows * w
    cols = rng.integers(0, x_span, n).astype(np.int64)
    vals = rng.uniform(0.5, 1.5, n)
    row_ids = np.arange(n_rows, dtype=np.int64)
    lengths = np.full(h, w, dtype=np.int64)
    wls = []
    for k in range(count):
        sl = slice(k * h * w, (k + 1) * h * w)
        wls.append(Workload(w, h, order, w, h, row_ids[k * h:(k + 1) * h], lengths,
                            cols[sl], vals[sl]))
    row_ptr = np.arange(0, n + 1, w, dtype=np.int64)
    tile = Tile(0, 0, x_span, row_ids, row_ptr, cols, vals)
    storage = layout_storage(wls, 0, hw)
    return PackedTile(tile, w * h, tuple(wls), storage)


def time_tile(p: PackedTile, xs, hw: HardwareProfile, reps=5):
    """Fastest of ``reps`` timed executions of the packed tile.

    The minimum is less sensitive to scheduler and allocator noise than the
    median; the collector is paused while timing.
    """
    from .kernels import execute_tile, tile_plan

    tile_plan(p, hw)
    y = np.zeros(int(p.tile.row_ids.max(initial=-1)) + 1, dtype=p.storage.values.dtype)
    execute_tile(p, xs, hw, y)  # warm-up
    samples = []
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(reps):
            t0 = time.perf_counter()
            execute_tile(p, xs, hw, y)
            samples.append(time.perf_counter() - t0)
    finally:
        if was_enabled:
            gc.enable()
    return float(min(samples))


CACHED_SPAN = 4096          # x segment small enough to stay cache resident
UNCACHED_SPAN = 1 << 22     # x large enough to miss on most accesses


def build_perf_table(hw: HardwareProfile, upper_bound=DEFAULT_UPPER_BOUND, mode="cached",
                     waves=2, reps=5, seed=0, shapes=None, progress=None, rounds=1) -> PerfTable:
    """Benchmark the tile engine on every admissible shape.

    Each cell runs ``waves * max_active_total`` identical workloads and
    records padded slots per second. With ``rounds > 1`` the whole sweep is
    repeated and each cell keeps its fastest time, so a transient slowdown
    of the host cannot spoil a single cell. Cells whose timing fails are
    marked invalid, which makes the table unusable until rebuilt.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if upper_bound < hw.warp_size:
        raise ValueError("upper_bound must be at least the warp size")
    span = CACHED_SPAN if mode == "cached" else UNCACHED_SPAN
    xs = np.random.default_rng(seed).uniform(-1, 1, span)
    count = waves * hw.max_active_total
    shapes = list(shapes) if shapes is not None else admissible_shapes(hw.warp_size, upper_bound)
    best = {}
    total = rounds * len(shapes)
    for rnd in range(rounds):
        for k, (w, h) in enumerate(shapes):
            p = uniform_packed_tile(w, h, count, hw, span, seed + k)
            try:
                t = time_tile(p, xs, hw, reps)
            except Exception:  # noqa: BLE001 - any failure poisons the cell
                t = float("nan")
            prev = best.get((w, h))
            if prev is None or math.isnan(t) or t < prev:   # a failed round poisons the cell
                best[(w, h)] = t
            if progress is not None:
                progress(rnd * len(shapes) + k + 1, total)
    entries, invalid = {}, set()
    for (w, h), t in best.items():
        thr = count * w * h / t if t > 0 else float("nan")
        if math.isfinite(thr) and thr > 0:
            entries[(w, h)] = thr
        else:
            invalid.add((w, h))
    stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return PerfTable(hw, upper_bound, mode, entries, invalid, stamp)


# --- prediction ------------------------------------------------------------

@dataclass(frozen=True)
class PredictedCost:
    total_time: float
    iteration_times: tuple
    iteration_sizes: tuple
    iteration_throughputs: tuple
    iteration_count: int          # ceil(num_warps / max_active_total)
    num_warps: int                # ceil(nnz / workload_size)
    walked_warps: int             # warps produced by the row walk
    shapes: tuple = ()

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()
                if k != "shapes"}


def iteration_count(num_warps, hw: HardwareProfile):
    return -(-num_warps // hw.max_active_total)


def evaluate_shapes(shapes, table, hw: HardwareProfile):
    """Padded size over mean throughput, per iteration of max_active_total
    consecutive warps.

    Returns (times, sizes, mean throughputs) per iteration.
    """
    act = hw.max_active_total
    times, sizes, thrs = [], [], []
    for first in range(0, len(shapes), act):
        group = shapes[first:first + act]
        size = 0
        perf = 0.0
        for w, h in group:
            perf += table.lookup(w, h)
            size += w * h
        mean = perf / len(group)
        sizes.append(size)
        thrs.append(mean)
        times.append(size / mean)
    return times, sizes, thrs


def walk_shapes(row_lengths, workload_size, warp_size, force_order=None, rows_per_workload=None):
    """Padded (w, h) of every warp when a sorted tile is cut at ``workload_size``.

    Warp j starts at row i with w = len(row i) and covers WL // w rows
    (clipped to the rows left), then w or h is padded to a warp multiple.
    """
    lengths = np.asarray(row_lengths).tolist()
    n = len(lengths)
    shapes = []
    i = 0
    while i < n:
        w = lengths[i]
        h = rows_per_workload or workload_size // w
        h = min(h, n - i)
        order, w_pad, h_pad = workload_shape(w, h, warp_size)
        if force_order == ROW_MAJOR and order != ROW_MAJOR:
            w_pad, h_pad = -(-w // warp_size) * warp_size, h
        elif force_order == COL_MAJOR and order != COL_MAJOR:
            w_pad, h_pad = w, -(-h // warp_size) * warp_size
        shapes.append((w_pad, h_pad))
        i += h
    return shapes


def predict_time(tile: Tile, workload_size, table, hw: HardwareProfile,
                 force_order=None, rows_per_workload=None) -> PredictedCost:
    """Predicted run time of ``tile`` cut into workloads of ``workload_size``."""
    if tile.num_rows == 0:
        raise WorkloadBoundError("cannot model an empty tile")
    lengths = tile.row_lengths
    if workload_size < lengths[0]:
        raise WorkloadBoundError(
            f"workload size {workload_size} is below the longest row ({int(lengths[0])})")
    shapes = walk_shapes(lengths, workload_size, hw.warp_size, force_order, rows_per_workload)
    times, sizes, thrs = evaluate_shapes(shapes, table, hw)
    total = 0.0
    for t in times:
        total += t
    nwarp = -(-tile.nnz // workload_size)
    return PredictedCost(total, tuple(times), tuple(sizes), tuple(thrs),
                         iteration_count(nwarp, hw), nwarp, len(shapes), tuple(shapes))


def layout_divergence(tile: Tile, workload_size, hw: HardwareProfile):
    """Relative difference in padded slots between the predictor's analytic
    cut and the greedy packing actually stored."""
    lengths = tile.row_lengths
    model = sum(w * h for w, h in walk_shapes(lengths, workload_size, hw.warp_size))
    starts = pack_boundaries(lengths, workload_size) + [tile.num_rows]
    stored = 0
    for r0, r1 in zip(starts[:-1], starts[1:]):
        _, w_pad, h_pad = workload_shape(int(lengths[r0]), r1 - r0, hw.warp_size)
        stored += w_pad * h_pad
    return (model - stored) / stored if stored else 0.0


def predict_csr_vector(row_lengths, table, hw: HardwareProfile) -> float:
    """CSR-vector: one warp per nonempty row, the row padded to a warp multiple."""
    W = hw.warp_size
    shapes = [(-(-int(n) // W) * W, 1) for n in row_lengths if n > 0]
    return sum(evaluate_shapes(shapes, table, hw)[0])


def predict_ell(row_lengths, table, hw: HardwareProfile) -> float:
    """ELL: one warp per ``warp_size`` consecutive rows, each padded to the widest."""
    W = hw.warp_size
    row_lengths = [int(n) for n in row_lengths if n > 0]
    k = max(row_lengths)
    groups = -(-len(row_lengths) // W)
    shapes = [(k, W)] * groups
    return sum(evaluate_shapes(shapes, table, hw)[0])
