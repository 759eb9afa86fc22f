"""SpMV kernels on an emulated warp scheduler.

Every kernel reproduces the lane structure of its GPU counterpart with a
fixed reduction order: lanes accumulate their strides sequentially, then a
binary tree folds the lanes. Results are therefore identical from run to
run and independent of how many worker threads execute tiles.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .hardware import HardwareProfile
from .matrix import CooMatrix, CsrMatrix, EllMatrix, HybMatrix, ELL_PAD
from .transform import ROW_MAJOR, PackedTile, TiledCompositeMatrix

BACKENDS = ("csr", "csr-vector", "ell", "coo", "hyb", "tile-coo", "tile-composite")


class IntegrityError(RuntimeError):
    """The packed layout is inconsistent (overlapping or out-of-range workloads)."""


@dataclass
class ExecStats:
    x_fetches_per_tile: list = field(default_factory=list)
    remainder_x_fetches: int = 0
    flops: int = 0
    padded_slots_touched: int = 0
    work_units_launched: int = 0
    tile_launches: int = 0
    waves: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_x(shape, x, dtype):
    x = np.asarray(x)
    if x.shape != (shape[1],):
        raise ValueError(f"x has shape {x.shape}, expected ({shape[1]},)")
    return x.astype(dtype, copy=False)


def seq_accumulate(index, weights, size, dtype):
    """out[index[k]] += weights[k] for k = 0, 1, ... in order."""
    if dtype == np.float64:
        return np.bincount(index, weights=weights, minlength=size)[:size]
    out = np.zeros(size, dtype=dtype)
    np.add.at(out, index, weights)
    return out


def tree_reduce(lanes):
    """Fold the lane axis (axis 1) pairwise: lane i += lane i + half, halving.

    Returns the reduced column and the number of folding steps.
    """
    lanes = np.array(lanes, copy=True)
    width = lanes.shape[1]
    p2 = 1
    while p2 < width:
        p2 *= 2
    if p2 != width:
        lanes = np.pad(lanes, ((0, 0), (0, p2 - width)))
    depth = 0
    while p2 > 1:
        p2 //= 2
        lanes[:, :p2] += lanes[:, p2:2 * p2]
        depth += 1
    return lanes[:, 0].copy(), depth


# --- baseline kernels ------------------------------------------------------

def spmv_csr_scalar(m: CsrMatrix, x) -> np.ndarray:
    """One lane per row, entries summed left to right."""
    x = _check_x(m.shape, x, m.dtype)
    prod = m.values * x[m.col_idx]
    return seq_accumulate(m.row_indices(), prod, m.num_rows, m.dtype).astype(m.dtype, copy=False)


def spmv_csr_vector(m: CsrMatrix, x, hw: HardwareProfile | None = None, trace=None) -> np.ndarray:
    """One warp per row: lane ``k % W`` takes entry ``k``, then a tree reduce."""
    hw = hw or HardwareProfile()
    W = hw.warp_size
    x = _check_x(m.shape, x, m.dtype)
    rows = m.row_indices()
    pos = np.arange(m.nnz, dtype=np.int64) - m.row_ptr[rows]
    prod = m.values * x[m.col_idx]
    acc = seq_accumulate(rows * W + pos % W, prod, m.num_rows * W, m.dtype)
    y, depth = tree_reduce(acc.reshape(m.num_rows, W))
    if trace is not None:
        trace["strides"] = -(-m.row_lengths() // W)
        trace["reduction_depth"] = depth
    return y.astype(m.dtype, copy=False)


def spmv_ell(m: EllMatrix, x) -> np.ndarray:
    """One lane per row walking its k slots (column-major storage)."""
    x = _check_x(m.shape, x, m.dtype)
    y = np.zeros(m.num_rows, dtype=m.dtype)
    for j in range(m.k):
        cols = m.col_idx[j]
        y += m.values[j] * x[np.where(cols == ELL_PAD, 0, cols)]
    return y


def coo_intervals(nnz, hw: HardwareProfile):
    """Equal-length entry intervals, one per active work unit."""
    if nnz == 0:
        return 0, 0
    length = -(-nnz // hw.max_active_total)
    return length, -(-nnz // length)


def segmented_scan(vals, keys):
    """Inclusive Hillis-Steele scan along axis 1 that only adds lanes with equal keys."""
    vals = vals.copy()
    width = vals.shape[1]
    off = 1
    while off < width:
        same = keys[:, off:] == keys[:, :-off]
        shifted = vals[:, :-off]
        vals[:, off:] = np.where(same, vals[:, off:] + shifted, vals[:, off:])
        off *= 2
    return vals


def spmv_coo(m: CooMatrix, x, hw: HardwareProfile | None = None, y=None) -> np.ndarray:
    """Interval-per-warp COO kernel with a segmented reduction per stride.

    Each work unit owns ``ceil(nnz / max_active_total)`` consecutive entries
    and walks them ``warp_size`` at a time. Within a stride, lanes holding
    the same row are combined by a segmented scan; the last lane of each
    row segment adds its sum into ``y``. Strides are processed in order.
    """
    hw = hw or HardwareProfile()
    W = hw.warp_size
    x = _check_x(m.shape, x, m.dtype)
    if y is None:
        y = np.zeros(m.num_rows, dtype=m.dtype)
    if m.nnz == 0:
        return y
    length, units = coo_intervals(m.nnz, hw)
    per_unit = -(-length // W)
    e = np.arange(m.nnz, dtype=np.int64)
    unit, pos = e // length, e % length
    stride = unit * per_unit + pos // W
    lane = pos % W
    n_strides = int(stride[-1]) + 1
    prod = np.zeros((n_strides, W), dtype=m.dtype)
    keys = np.full((n_strides, W), -1, dtype=np.int64)
    prod[stride, lane] = m.values * x[m.cols]
    keys[stride, lane] = m.rows
    scanned = segmented_scan(prod, keys)
    last = np.ones((n_strides, W), dtype=bool)
    last[:, :-1] = keys[:, 1:] != keys[:, :-1]
    last &= keys >= 0
    y += seq_accumulate(keys[last], scanned[last], m.num_rows, m.dtype).astype(m.dtype, copy=False)
    return y


def spmv_hyb(m: HybMatrix, x, hw: HardwareProfile | None = None) -> np.ndarray:
    y = spmv_ell(m.ell_part, x)
    return spmv_coo(m.coo_part, x, hw, y)


# --- tile-composite engine -------------------------------------------------

@dataclass(frozen=True)
class Wave:
    """Workloads that are resident together (one occupancy-limited iteration)."""

    start: int                 # slab of flat storage covered by the wave
    end: int
    acc_index: np.ndarray      # accumulator of each slot in the slab
    num_acc: int
    rm_rows: np.ndarray        # rows finished by a lane tree (row-major workloads)
    cm_rows: np.ndarray        # one row per lane (column-major), -1 for padding rows
    slots: int                 # padded workload slots, camping pads excluded


@dataclass(frozen=True)
class TilePlan:
    waves: tuple
    distinct_x: int
    padded_slots: int
    warp_size: int


def _check_layout(p: PackedTile):
    st = p.storage
    sizes = np.array([wl.size for wl in p.workloads], dtype=np.int64)
    if len(sizes) != st.offsets.size or st.pads.size != st.offsets.size:
        raise IntegrityError("workload descriptors do not match the storage offsets")
    if len(sizes):
        ends = st.offsets + sizes + st.pads
        if st.offsets[0] != 0 or np.any(st.offsets[1:] != ends[:-1]) or ends[-1] != st.size:
            raise IntegrityError("workload storage overlaps or leaves gaps")
    if st.cols.size and (st.cols.min() < p.tile.start_col or st.cols.max() >= p.tile.end_col):
        raise IntegrityError("stored column index outside the tile")


def tile_plan(p: PackedTile, hw: HardwareProfile) -> TilePlan:
    """Schedule of a packed tile on ``hw``: waves of max_active_total warps."""
    key = (hw.warp_size, hw.max_active_total)
    plan = p._plans.get(key)
    if plan is not None:
        return plan
    _check_layout(p)
    W = hw.warp_size
    st = p.storage
    waves = []
    wls = p.workloads
    step = hw.max_active_total
    for first in range(0, len(wls), step):
        group = range(first, min(first + step, len(wls)))
        start = int(st.offsets[first])
        last = group[-1]
        end = int(st.offsets[last]) + wls[last].size
        n_rm = sum(wls[j].h for j in group if wls[j].order == ROW_MAJOR)
        n_cm = sum(wls[j].h_pad for j in group if wls[j].order != ROW_MAJOR)
        dump = n_rm * W + n_cm
        idx = np.full(end - start, dump, dtype=np.int64)
        rm_rows, cm_rows = [], []
        rm_base, cm_base = 0, n_rm * W
        slots = 0
        for j in group:
            wl = wls[j]
            off = int(st.offsets[j]) - start
            if wl.order == ROW_MAJOR:
                r, k = np.divmod(np.arange(wl.size, dtype=np.int64), wl.w_pad)
                idx[off:off + wl.size] = rm_base + r * W + k % W
                rm_base += wl.h * W
                rm_rows.append(wl.row_ids)
            else:
                idx[off:off + wl.size] = cm_base + np.arange(wl.size, dtype=np.int64) % wl.h_pad
                cm_base += wl.h_pad
                cm_rows.append(np.pad(wl.row_ids, (0, wl.h_pad - wl.h), constant_values=-1))
            slots += wl.size
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, np.int64)  # noqa: E731
        waves.append(Wave(start, end, idx, dump, cat(rm_rows), cat(cm_rows), slots))
    plan = TilePlan(tuple(waves), int(np.unique(st.cols).size) if st.size else 0,
                    sum(w.slots for w in waves), W)
    p._plans[key] = plan
    return plan


def execute_tile(p: PackedTile, xs, hw: HardwareProfile, y=None):
    """Run one packed tile against the column-sorted vector ``xs``.

    Writes this tile's partial sums into ``y`` (a fresh zero buffer when
    omitted) and returns it.
    """
    plan = tile_plan(p, hw)
    st = p.storage
    dt = st.values.dtype
    if y is None:
        y = np.zeros(int(max(p.tile.row_ids.max(initial=-1) + 1, 0)), dtype=dt)
    W = plan.warp_size
    for wave in plan.waves:
        prod = st.values[wave.start:wave.end] * xs[st.cols[wave.start:wave.end]]
        acc = seq_accumulate(wave.acc_index, prod, wave.num_acc + 1, dt)
        n_rm = wave.rm_rows.size
        if n_rm:
            red, _ = tree_reduce(acc[:n_rm * W].reshape(n_rm, W))
            y[wave.rm_rows] = red
        if wave.cm_rows.size:
            lanes = acc[n_rm * W:wave.num_acc]
            live = wave.cm_rows >= 0
            y[wave.cm_rows[live]] = lanes[live]
    return y


def spmv_tile_composite(m: TiledCompositeMatrix, x, hw: HardwareProfile | None = None,
                        workers: int = 1):
    """y = A x over the tile-composite layout; returns (y, ExecStats).

    Each tile (and the remainder) fills its own partial buffer; buffers are
    summed in ascending tile order.
    """
    hw = hw or m.hardware
    x = _check_x(m.shape, x, m.dtype)
    xs = x[m.col_order]
    packed = m.packed

    def run(p):
        return execute_tile(p, xs, hw, np.zeros(m.num_rows, dtype=m.dtype))

    if workers > 1 and len(packed) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run, packed))
    else:
        partials = [run(p) for p in packed]

    y = np.zeros(m.num_rows, dtype=m.dtype)
    for part in partials:
        y += part
    if m.remainder_hyb is not None:
        y += spmv_hyb(m.remainder_hyb, xs, hw)

    stats = ExecStats(flops=2 * m.nnz)
    for p in packed:
        plan = tile_plan(p, hw)
        if p.tile.is_remainder:
            stats.remainder_x_fetches = plan.distinct_x
        else:
            stats.x_fetches_per_tile.append(plan.distinct_x)
        stats.padded_slots_touched += plan.padded_slots
        stats.work_units_launched += len(p.workloads)
        stats.waves += len(plan.waves)
    stats.tile_launches = len(packed) + (m.remainder_hyb is not None)
    if m.remainder_hyb is not None:
        h = m.remainder_hyb
        stats.remainder_x_fetches = int(np.unique(np.concatenate(
            [h.ell_part.col_idx[h.ell_part.col_idx != ELL_PAD], h.coo_part.cols])).size)
    return y, stats


def spmv_tile_coo(m, x, hw: HardwareProfile | None = None):
    """Dense tiles through the COO kernel, remainder through HYB; (y, ExecStats)."""
    hw = hw or HardwareProfile()
    x = _check_x(m.shape, x, m.dtype)
    xs = x[m.col_order]
    y = np.zeros(m.num_rows, dtype=m.dtype)
    stats = ExecStats(flops=2 * m.nnz)
    for t in m.tiles:
        y += spmv_coo(t, xs, hw)
        stats.x_fetches_per_tile.append(int(np.unique(t.cols).size))
        stats.work_units_launched += coo_intervals(t.nnz, hw)[1]
    if m.remainder is not None:
        y += spmv_hyb(m.remainder, xs, hw)
        h = m.remainder
        stats.remainder_x_fetches = int(np.unique(np.concatenate(
            [h.ell_part.col_idx[h.ell_part.col_idx != ELL_PAD], h.coo_part.cols])).size)
    stats.tile_launches = len(m.tiles) + (m.remainder is not None)
    stats.padded_slots_touched = m.nnz
    return y, stats
