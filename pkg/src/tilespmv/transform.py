"""Column reordering, tiling and composite (CSR/ELL) workload packing.

Pipeline, for a matrix ``m``::

    sorted_m = sort_columns_desc(m)                 # longest columns first
    ranges, sparse_start = enumerate_tiles(sorted_m, tile_width)
    tile = sort_rows_desc(extract_tile(...))        # rows by in-tile length
    workloads = pack_workloads(tile, wl, warp)      # greedy rectangles
    storage = layout_storage(workloads, tile, hw)   # flat padded arrays

:func:`build_tile_composite` runs all of it. Column indices inside tiles and
workloads live in the *sorted* column space; ``col_order[new] = old`` maps
them back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .hardware import HardwareProfile
from .matrix import CooMatrix, CsrMatrix, HybMatrix, as_csr, concat_ranges, coo_to_hyb, hyb_to_coo

DEFAULT_TILE_WIDTH = 65536  # 64K four-byte floats fill a 256 KB texture cache
ELEMENT_BYTES = 4
ROW_MAJOR = "row"
COL_MAJOR = "col"
REMAINDER_MODES = ("composite", "hyb")


class LayoutError(ValueError):
    pass


def round_up(value, multiple):
    return -(-value // multiple) * multiple


# --- column sort -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ColumnSortedMatrix:
    base: CsrMatrix            # column-permuted copy of the input
    col_perm: np.ndarray       # old column -> new column
    col_order: np.ndarray      # new column -> old column
    col_lengths: np.ndarray    # nnz of each new column, non-increasing

    @property
    def shape(self):
        return self.base.shape

    @property
    def nnz(self):
        return self.base.nnz

    def unsort(self) -> CsrMatrix:
        """Undo the column permutation."""
        b = self.base
        rows = b.row_indices()
        coo = CooMatrix.from_entries(b.num_rows, b.num_cols, rows, self.col_order[b.col_idx],
                                     b.values, b.dtype)
        return as_csr(coo)


def sort_columns_desc(m) -> ColumnSortedMatrix:
    m = as_csr(m)
    lengths = m.col_lengths()
    col_order = np.lexsort((np.arange(m.num_cols), -lengths))
    col_perm = np.empty_like(col_order)
    col_perm[col_order] = np.arange(m.num_cols)
    rows = m.row_indices()
    coo = CooMatrix.from_entries(m.num_rows, m.num_cols, rows, col_perm[m.col_idx], m.values, m.dtype)
    for a in (col_perm, col_order):
        a.setflags(write=False)
    return ColumnSortedMatrix(as_csr(coo), col_perm, col_order, lengths[col_order])


def enumerate_tiles(m: ColumnSortedMatrix, tile_width: int, max_tiles: int | None = None):
    """Dense tile column ranges and the first column of the sparse remainder.

    Tiles are consecutive ``tile_width`` spans from column 0; enumeration
    stops at the first span whose leading (longest) column has at most one
    entry, or after ceil(num_cols / tile_width) spans.
    """
    if tile_width < 1:
        raise ValueError("tile_width must be >= 1")
    n = m.shape[1]
    limit = math.ceil(n / tile_width)
    if max_tiles is not None:
        limit = min(limit, max_tiles)
    ranges = []
    while len(ranges) < limit:
        start = len(ranges) * tile_width
        if m.col_lengths[start] <= 1:
            break
        ranges.append((start, min(start + tile_width, n)))
    sparse_start = min(len(ranges) * tile_width, n)
    return ranges, sparse_start


# --- tiles -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tile:
    """Entries of one column span, grouped by row.

    ``row_ids`` lists the original rows present in the span, in storage
    order; row ``k``'s entries are ``cols/values[row_ptr[k]:row_ptr[k+1]]``.
    """

    tile_id: int
    start_col: int
    end_col: int
    row_ids: np.ndarray
    row_ptr: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    is_remainder: bool = False

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def num_rows(self):
        return int(self.row_ids.size)

    @property
    def width(self):
        return self.end_col - self.start_col

    @cached_property
    def row_lengths(self):
        return np.diff(self.row_ptr)

    @property
    def longest_row(self):
        return int(self.row_lengths[0]) if self.num_rows else 0

    def entries(self):
        """(row, sorted-space col, value) triples."""
        rows = np.repeat(self.row_ids, self.row_lengths)
        return rows, self.cols, self.values


def _tile_from_entries(tile_id, start, end, rows, cols, vals, is_remainder=False):
    # entries arrive grouped by ascending row
    row_ids, counts = np.unique(rows, return_counts=True)
    row_ptr = np.zeros(row_ids.size + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return Tile(tile_id, int(start), int(end), row_ids, row_ptr, cols, vals, is_remainder)


def extract_tile(m: ColumnSortedMatrix, start_col, end_col, tile_id=0, is_remainder=False) -> Tile:
    """Entries of sorted columns [start_col, end_col), rows in ascending order."""
    b = m.base
    rows = b.row_indices()
    sel = (b.col_idx >= start_col) & (b.col_idx < end_col)
    return _tile_from_entries(tile_id, start_col, end_col, rows[sel], b.col_idx[sel],
                              b.values[sel], is_remainder)


def split_tiles(m: ColumnSortedMatrix, ranges, sparse_start):
    """All dense tiles plus the remainder (None if it has no columns), one pass."""
    b = m.base
    n = b.num_cols
    bounds = np.array([r[0] for r in ranges] + [sparse_start], dtype=np.int64)
    bucket = np.searchsorted(bounds, b.col_idx, side="right") - 1
    rows = b.row_indices()
    order = np.argsort(bucket, kind="stable")
    edges = np.searchsorted(bucket[order], np.arange(len(ranges) + 2))
    out = []
    for t in range(len(ranges) + 1):
        sel = order[edges[t]:edges[t + 1]]
        if t < len(ranges):
            start, end, rem = ranges[t][0], ranges[t][1], False
        else:
            if sparse_start >= n:
                break
            start, end, rem = sparse_start, n, True
        out.append(_tile_from_entries(t, start, end, rows[sel], b.col_idx[sel], b.values[sel], rem))
    tiles = [t for t in out if not t.is_remainder]
    remainder = out[-1] if out and out[-1].is_remainder else None
    return tiles, remainder


def sort_rows_desc(t: Tile) -> Tile:
    """Reorder rows by non-increasing in-tile length (ties: ascending row id)."""
    lengths = t.row_lengths
    order = np.lexsort((t.row_ids, -lengths))
    new_lengths = lengths[order]
    row_ptr = np.zeros(order.size + 1, dtype=np.int64)
    np.cumsum(new_lengths, out=row_ptr[1:])
    take = concat_ranges(t.row_ptr[order], new_lengths)
    return Tile(t.tile_id, t.start_col, t.end_col, t.row_ids[order], row_ptr,
                t.cols[take], t.values[take], t.is_remainder)


# --- workloads -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Workload:
    """A w x h rectangle of consecutive (length-sorted) tile rows.

    ``w``/``h`` are the shape before warp padding; ``w_pad``/``h_pad`` after.
    Rows shorter than ``w`` are zero-padded. Row-major workloads round
    ``w_pad`` up to a warp multiple, column-major ones round ``h_pad``.
    """

    w: int
    h: int
    order: str
    w_pad: int
    h_pad: int
    row_ids: np.ndarray
    row_lengths: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @property
    def size(self):
        return self.w_pad * self.h_pad

    @property
    def nnz(self):
        return int(self.values.size)

    def storage(self, sentinel):
        """Padded (values, cols) flat arrays in the workload's storage order."""
        vals = np.zeros((self.h_pad, self.w_pad), dtype=self.values.dtype)
        cols = np.full((self.h_pad, self.w_pad), sentinel, dtype=np.int64)
        r = np.repeat(np.arange(self.h), self.row_lengths)
        k = np.arange(self.nnz) - np.repeat(np.cumsum(self.row_lengths) - self.row_lengths,
                                            self.row_lengths)
        vals[r, k] = self.values
        cols[r, k] = self.cols
        order = "C" if self.order == ROW_MAJOR else "F"
        return vals.ravel(order=order), cols.ravel(order=order)


def workload_shape(w, h, warp_size):
    """Storage order and padded shape for a w x h rectangle."""
    if w >= h:
        return ROW_MAJOR, round_up(w, warp_size), h
    return COL_MAJOR, w, round_up(h, warp_size)


def pack_boundaries(row_lengths, workload_size):
    """Greedy packing of descending row lengths; returns row start indices.

    A row joins the current workload while the running nnz stays within
    ``workload_size``; otherwise it opens a new workload.
    """
    row_lengths = np.asarray(row_lengths)
    if row_lengths.size and workload_size < row_lengths[0]:
        raise LayoutError(
            f"workload size {workload_size} is below the longest row ({int(row_lengths[0])}); "
            "a row cannot be split across workloads")
    starts = []
    filled = workload_size + 1  # force a new workload on the first row
    for i, length in enumerate(row_lengths.tolist()):
        if filled + length > workload_size:
            starts.append(i)
            filled = 0
        filled += length
    return starts


def pack_workloads(t: Tile, workload_size: int, warp_size: int) -> list[Workload]:
    lengths = t.row_lengths
    if t.num_rows and np.any(np.diff(lengths) > 0):
        raise LayoutError("tile rows must be sorted by descending length")
    starts = pack_boundaries(lengths, workload_size)
    bounds = starts + [t.num_rows]
    out = []
    for r0, r1 in zip(bounds[:-1], bounds[1:]):
        w, h = int(lengths[r0]), r1 - r0
        order, w_pad, h_pad = workload_shape(w, h, warp_size)
        e0, e1 = t.row_ptr[r0], t.row_ptr[r1]
        out.append(Workload(w, h, order, w_pad, h_pad, t.row_ids[r0:r1], lengths[r0:r1],
                            t.cols[e0:e1], t.values[e0:e1]))
    return out


# --- storage layout --------------------------------------------------------

def camping_params(hw: HardwareProfile):
    """(stride, pad) in elements: all addresses one stride apart share a
    memory partition; ``pad`` is one partition width of dead space."""
    stride = hw.partitions * hw.partition_width_bytes // ELEMENT_BYTES
    pad = hw.partition_width_bytes // ELEMENT_BYTES
    return stride, pad


def camping_pad(size, hw: HardwareProfile):
    stride, pad = camping_params(hw)
    return pad if size > 0 and size % stride == 0 else 0


@dataclass(frozen=True, eq=False)
class TileStorage:
    values: np.ndarray
    cols: np.ndarray
    offsets: np.ndarray   # start slot of each workload
    pads: np.ndarray      # dead slots appended after each workload

    @property
    def size(self):
        return int(self.values.size)


def layout_storage(workloads, sentinel, hw: HardwareProfile, dtype=np.float64) -> TileStorage:
    """Concatenate padded workloads, appending a partition-camping pad after
    every workload whose slot count is a multiple of the partition stride."""
    sizes = np.array([wl.size for wl in workloads], dtype=np.int64)
    pads = np.array([camping_pad(int(s), hw) for s in sizes], dtype=np.int64)
    offsets = np.zeros(len(workloads), dtype=np.int64)
    if len(workloads) > 1:
        np.cumsum((sizes + pads)[:-1], out=offsets[1:])
    total = int((sizes + pads).sum())
    values = np.zeros(total, dtype=dtype)
    cols = np.full(total, sentinel, dtype=np.int64)
    for wl, off in zip(workloads, offsets.tolist()):
        v, c = wl.storage(sentinel)
        values[off:off + v.size] = v
        cols[off:off + c.size] = c
    for a in (values, cols, offsets, pads):
        a.setflags(write=False)
    return TileStorage(values, cols, offsets, pads)


@dataclass(frozen=True, eq=False)
class PackedTile:
    tile: Tile
    workload_size: int
    workloads: tuple
    storage: TileStorage
    _plans: dict = field(default_factory=dict, repr=False)

    @property
    def sentinel(self):
        return self.tile.start_col

    def unpack(self):
        """Read (row, sorted col, value) back out of the flat storage."""
        rows, cols, vals = [], [], []
        st = self.storage
        for wl, off in zip(self.workloads, st.offsets.tolist()):
            v = st.values[off:off + wl.size].reshape(wl.h_pad, wl.w_pad,
                                                    order="C" if wl.order == ROW_MAJOR else "F")
            c = st.cols[off:off + wl.size].reshape(wl.h_pad, wl.w_pad,
                                                  order="C" if wl.order == ROW_MAJOR else "F")
            mask = np.arange(wl.w_pad)[None, :] < np.pad(wl.row_lengths, (0, wl.h_pad - wl.h))[:, None]
            r_idx, k_idx = np.nonzero(mask)
            rows.append(wl.row_ids[r_idx])
            cols.append(c[r_idx, k_idx])
            vals.append(v[r_idx, k_idx])
        if not rows:
            return (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, st.values.dtype))
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def pack_tile(tile: Tile, workload_size, hw: HardwareProfile) -> PackedTile:
    wls = pack_workloads(tile, workload_size, hw.warp_size)
    storage = layout_storage(wls, tile.start_col, hw, tile.values.dtype)
    return PackedTile(tile, int(workload_size), tuple(wls), storage)


# --- the whole matrix ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TiledCompositeMatrix:
    num_rows: int
    num_cols: int
    tile_width: int
    hardware: HardwareProfile
    col_order: np.ndarray
    col_perm: np.ndarray
    tiles: tuple
    remainder: PackedTile | None
    remainder_hyb: HybMatrix | None = None
    remainder_mode: str = "composite"
    sparse_start: int = 0

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def warp_size(self):
        return self.hardware.warp_size

    @property
    def nnz(self):
        n = sum(p.tile.nnz for p in self.tiles)
        if self.remainder is not None:
            n += self.remainder.tile.nnz
        if self.remainder_hyb is not None:
            n += self.remainder_hyb.nnz
        return n

    @property
    def dtype(self):
        for p in self.tiles:
            return p.storage.values.dtype
        if self.remainder is not None:
            return self.remainder.storage.values.dtype
        if self.remainder_hyb is not None:
            return self.remainder_hyb.dtype
        return np.dtype(np.float64)

    @property
    def packed(self):
        """Dense tiles followed by the composite remainder, if any."""
        out = list(self.tiles)
        if self.remainder is not None:
            out.append(self.remainder)
        return out

    def to_coo(self) -> CooMatrix:
        """Rebuild the source matrix from the stored layout."""
        parts = [p.unpack() for p in self.packed]
        if self.remainder_hyb is not None:
            h = hyb_to_coo(self.remainder_hyb)
            parts.append((h.rows, h.cols, h.values))
        if parts:
            rows = np.concatenate([p[0] for p in parts])
            cols = np.concatenate([p[1] for p in parts])
            vals = np.concatenate([p[2] for p in parts])
        else:
            rows = cols = np.zeros(0, np.int64)
            vals = np.zeros(0)
        return CooMatrix.from_entries(self.num_rows, self.num_cols, rows, self.col_order[cols],
                                      vals, self.dtype)


def build_tile_composite(m, tile_width=DEFAULT_TILE_WIDTH, workload_sizes=None, hw=None,
                         remainder_workload_size=None, num_tiles=None,
                         remainder_mode="composite", sorted_m=None) -> TiledCompositeMatrix:
    """Reorder, tile and pack ``m``.

    ``workload_sizes`` is an int (all tiles), a per-tile sequence, or None
    (each tile's longest row). ``num_tiles`` caps the number of dense tiles.
    """
    if remainder_mode not in REMAINDER_MODES:
        raise ValueError(f"remainder_mode must be one of {REMAINDER_MODES}")
    hw = hw or HardwareProfile()
    m = as_csr(m)
    if sorted_m is None:
        sorted_m = sort_columns_desc(m)
    ranges, sparse_start = enumerate_tiles(sorted_m, tile_width, num_tiles)
    tiles, remainder = split_tiles(sorted_m, ranges, sparse_start)

    if workload_sizes is None or np.isscalar(workload_sizes):
        sizes = [workload_sizes] * len(tiles)
    else:
        sizes = list(workload_sizes)
        if len(sizes) < len(tiles):
            raise ValueError(f"{len(tiles)} tiles but only {len(sizes)} workload sizes")
    packed = []
    for t, wl in zip(tiles, sizes):
        t = sort_rows_desc(t)
        packed.append(pack_tile(t, t.longest_row if wl is None else wl, hw))

    rem_packed = rem_hyb = None
    if remainder is not None and remainder.nnz:
        if remainder_mode == "hyb":
            rows, cols, vals = remainder.entries()
            coo = CooMatrix.from_entries(m.num_rows, m.num_cols, rows, cols, vals, m.dtype)
            rem_hyb = coo_to_hyb(coo)
        else:
            r = sort_rows_desc(remainder)
            wl = r.longest_row if remainder_workload_size is None else remainder_workload_size
            rem_packed = pack_tile(r, wl, hw)
    return TiledCompositeMatrix(m.num_rows, m.num_cols, int(tile_width), hw,
                                sorted_m.col_order, sorted_m.col_perm, tuple(packed),
                                rem_packed, rem_hyb, remainder_mode, sparse_start)


@dataclass(frozen=True, eq=False)
class TileCooMatrix:
    """Tiled variant that keeps each dense tile in COO and the remainder in HYB."""

    num_rows: int
    num_cols: int
    tile_width: int
    col_order: np.ndarray
    ranges: tuple
    tiles: tuple            # CooMatrix per dense tile, sorted column space
    remainder: HybMatrix | None

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        n = sum(t.nnz for t in self.tiles)
        return n + (self.remainder.nnz if self.remainder is not None else 0)

    @property
    def dtype(self):
        for t in self.tiles:
            return t.dtype
        return self.remainder.dtype if self.remainder is not None else np.dtype(np.float64)

    def to_coo(self) -> CooMatrix:
        parts = list(self.tiles)
        if self.remainder is not None:
            parts.append(hyb_to_coo(self.remainder))
        rows = np.concatenate([p.rows for p in parts]) if parts else np.zeros(0, np.int64)
        cols = np.concatenate([p.cols for p in parts]) if parts else np.zeros(0, np.int64)
        vals = np.concatenate([p.values for p in parts]) if parts else np.zeros(0)
        return CooMatrix.from_entries(self.num_rows, self.num_cols, rows, self.col_order[cols],
                                      vals, self.dtype)


def build_tile_coo(m, tile_width=DEFAULT_TILE_WIDTH, num_tiles=None, sorted_m=None) -> TileCooMatrix:
    m = as_csr(m)
    if sorted_m is None:
        sorted_m = sort_columns_desc(m)
    ranges, sparse_start = enumerate_tiles(sorted_m, tile_width, num_tiles)
    tiles, remainder = split_tiles(sorted_m, ranges, sparse_start)

    def coo(t):
        rows, cols, vals = t.entries()
        return CooMatrix.from_entries(m.num_rows, m.num_cols, rows, cols, vals, m.dtype)

    rem = coo_to_hyb(coo(remainder)) if remainder is not None and remainder.nnz else None
    return TileCooMatrix(m.num_rows, m.num_cols, int(tile_width), sorted_m.col_order,
                         tuple(ranges), tuple(coo(t) for t in tiles), rem)
