"""Sparse matrix containers, format conversions and the dense reference multiply.

All containers are immutable after construction. Index arrays are int64,
value arrays are float64 unless a matrix was explicitly built in 32-bit mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPES = {"float64": np.float64, "float32": np.float32}

# sentinel column index for ELL padding slots
ELL_PAD = -1


class FormatError(ValueError):
    """Raised when a matrix violates its container invariants."""


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def _as_dtype(dtype):
    if isinstance(dtype, str):
        try:
            return np.dtype(DTYPES[dtype])
        except KeyError:
            raise ValueError(f"unsupported scalar type {dtype!r}") from None
    return np.dtype(dtype)


@dataclass(frozen=True, eq=False)
class CooMatrix:
    """Coordinate format. Use :meth:`from_entries` to get a canonical matrix."""

    num_rows: int
    num_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.int64)
        cols = np.array(self.cols, dtype=np.int64)
        values = np.array(self.values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        if not (rows.shape == cols.shape == values.shape) or rows.ndim != 1:
            raise FormatError("rows, cols and values must be 1-d arrays of equal length")
        if self.num_rows < 0 or self.num_cols < 0:
            raise FormatError("negative dimension")
        if rows.size and (rows.min() < 0 or rows.max() >= self.num_rows):
            raise FormatError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= self.num_cols):
            raise FormatError("column index out of range")
        _freeze(rows, cols, values)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_entries(cls, num_rows, num_cols, rows, cols, values, dtype="float64"):
        """Build a canonical matrix: sorted by (row, col), duplicates summed."""
        dt = _as_dtype(dtype)
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=dt).ravel()
        if rows.size and (rows.min() < 0 or rows.max() >= num_rows):
            raise FormatError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= num_cols):
            raise FormatError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1:
            new = np.ones(rows.size, dtype=bool)
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            if not new.all():
                starts = np.flatnonzero(new)
                # sequential sum per duplicate group keeps results reproducible
                summed = np.zeros(starts.size, dtype=dt)
                np.add.at(summed, np.cumsum(new) - 1, values)
                rows, cols, values = rows[starts], cols[starts], summed
        return cls(int(num_rows), int(num_cols), rows, cols, values)

    @classmethod
    def from_triples(cls, num_rows, num_cols, triples, dtype="float64"):
        triples = list(triples)
        if not triples:
            return cls.from_entries(num_rows, num_cols, [], [], [], dtype)
        r, c, v = zip(*triples)
        return cls.from_entries(num_rows, num_cols, r, c, v, dtype)

    @classmethod
    def from_dense(cls, a, dtype="float64"):
        a = np.asarray(a)
        r, c = np.nonzero(a)
        return cls.from_entries(a.shape[0], a.shape[1], r, c, a[r, c], dtype)

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def dtype(self):
        return self.values.dtype

    def triples(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def is_canonical(self):
        if self.nnz < 2:
            return True
        key_r, key_c = self.rows, self.cols
        later = (key_r[1:] > key_r[:-1]) | ((key_r[1:] == key_r[:-1]) & (key_c[1:] > key_c[:-1]))
        return bool(later.all())

    def astype(self, dtype):
        return CooMatrix(self.num_rows, self.num_cols, self.rows, self.cols,
                         self.values.astype(_as_dtype(dtype)))

    def to_dense(self):
        out = np.zeros(self.shape, dtype=self.dtype)
        out[self.rows, self.cols] = self.values
        return out

    def __eq__(self, other):
        if not isinstance(other, CooMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"CooMatrix({self.num_rows}x{self.num_cols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    num_rows: int
    num_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        row_ptr = np.array(self.row_ptr, dtype=np.int64)
        col_idx = np.array(self.col_idx, dtype=np.int64)
        values = np.array(self.values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        if row_ptr.shape != (self.num_rows + 1,):
            raise FormatError("row_ptr must have num_rows + 1 entries")
        if row_ptr[0] != 0 or row_ptr[-1] != col_idx.size or col_idx.size != values.size:
            raise FormatError("row_ptr does not match the stored entries")
        if np.any(np.diff(row_ptr) < 0):
            raise FormatError("row_ptr must be non-decreasing")
        if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= self.num_cols):
            raise FormatError("column index out of range")
        _freeze(row_ptr, col_idx, values)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def dtype(self):
        return self.values.dtype

    def row_lengths(self):
        return np.diff(self.row_ptr)

    def col_lengths(self):
        return np.bincount(self.col_idx, minlength=self.num_cols)

    def row_indices(self):
        """Row index of every stored entry (the expanded row_ptr)."""
        return np.repeat(np.arange(self.num_rows, dtype=np.int64), self.row_lengths())

    def astype(self, dtype):
        return CsrMatrix(self.num_rows, self.num_cols, self.row_ptr, self.col_idx,
                         self.values.astype(_as_dtype(dtype)))

    def to_dense(self):
        return csr_to_coo(self).to_dense()

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"CsrMatrix({self.num_rows}x{self.num_cols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class EllMatrix:
    """ELL-pack storage: ``col_idx``/``values`` have shape (k, num_rows).

    Row-slot ``j`` of row ``i`` lives at ``[j, i]``; flattening in C order
    therefore gives the column-major layout used by the kernel.
    """

    num_rows: int
    num_cols: int
    k: int
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        col_idx = np.array(self.col_idx, dtype=np.int64)
        values = np.array(self.values)
        if col_idx.shape != (self.k, self.num_rows) or values.shape != col_idx.shape:
            raise FormatError("ELL arrays must have shape (k, num_rows)")
        pad = col_idx == ELL_PAD
        if np.any(values[pad] != 0):
            raise FormatError("ELL padding slots must hold 0")
        live = col_idx[~pad]
        if live.size and (live.min() < 0 or live.max() >= self.num_cols):
            raise FormatError("column index out of range")
        _freeze(col_idx, values)
        object.__setattr__(self, "col_idx", col_idx)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return (self.num_rows, self.num_cols)

    @property
    def nnz(self):
        return int(np.count_nonzero(self.col_idx != ELL_PAD))

    @property
    def dtype(self):
        return self.values.dtype


@dataclass(frozen=True, eq=False)
class HybMatrix:
    ell_part: EllMatrix
    coo_part: CooMatrix
    k: int

    @property
    def shape(self):
        return self.ell_part.shape

    @property
    def nnz(self):
        return self.ell_part.nnz + self.coo_part.nnz

    @property
    def dtype(self):
        return self.ell_part.dtype


@dataclass(frozen=True)
class DegreeHistogram:
    row_counts: np.ndarray
    col_counts: np.ndarray
    nnz: int = field(default=0)

    @classmethod
    def of(cls, m):
        coo = as_coo(m)
        rc = np.bincount(coo.rows, minlength=coo.num_rows)
        cc = np.bincount(coo.cols, minlength=coo.num_cols)
        return cls(rc, cc, coo.nnz)

    @staticmethod
    def frequency(counts):
        """Return (degree, number of lines with that degree) for degrees >= 1."""
        hist = np.bincount(counts)
        d = np.flatnonzero(hist)
        d = d[d > 0]
        return d, hist[d]


# --- conversions -----------------------------------------------------------

def coo_to_csr(m: CooMatrix) -> CsrMatrix:
    if not m.is_canonical():
        m = CooMatrix.from_entries(m.num_rows, m.num_cols, m.rows, m.cols, m.values, m.dtype)
    counts = np.bincount(m.rows, minlength=m.num_rows)
    row_ptr = np.zeros(m.num_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(m.num_rows, m.num_cols, row_ptr, m.cols.copy(), m.values.copy())


def csr_to_coo(m: CsrMatrix) -> CooMatrix:
    rows = m.row_indices()
    # entries inside a CSR row may be unsorted; canonicalise without summing
    order = np.lexsort((m.col_idx, rows))
    return CooMatrix(m.num_rows, m.num_cols, rows[order], m.col_idx[order], m.values[order])


def as_coo(m) -> CooMatrix:
    if isinstance(m, CooMatrix):
        return m
    if isinstance(m, CsrMatrix):
        return csr_to_coo(m)
    if isinstance(m, EllMatrix):
        return ell_to_coo(m)
    if isinstance(m, HybMatrix):
        return hyb_to_coo(m)
    to_coo = getattr(m, "to_coo", None)
    if to_coo is not None:
        return to_coo()
    raise TypeError(f"cannot convert {type(m).__name__} to COO")


def as_csr(m) -> CsrMatrix:
    if isinstance(m, CsrMatrix):
        return m
    return coo_to_csr(as_coo(m))


def coo_to_ell(m: CooMatrix, k: int | None = None) -> EllMatrix:
    lengths = np.bincount(m.rows, minlength=m.num_rows)
    longest = int(lengths.max()) if m.num_rows else 0
    if k is None:
        k = longest
    if longest > k:
        raise FormatError(f"row of length {longest} does not fit ELL width k={k}")
    slot = _slot_in_row(m.rows, m.num_rows)
    col_idx = np.full((k, m.num_rows), ELL_PAD, dtype=np.int64)
    values = np.zeros((k, m.num_rows), dtype=m.dtype)
    col_idx[slot, m.rows] = m.cols
    values[slot, m.rows] = m.values
    return EllMatrix(m.num_rows, m.num_cols, k, col_idx, values)


def ell_to_coo(m: EllMatrix) -> CooMatrix:
    slot, rows = np.nonzero(m.col_idx != ELL_PAD)
    return CooMatrix.from_entries(m.num_rows, m.num_cols, rows, m.col_idx[slot, rows],
                                  m.values[slot, rows], m.dtype)


def coo_to_hyb(m: CooMatrix, k: int | None = None) -> HybMatrix:
    """Split each row: the first ``k`` entries go to ELL, the rest to COO."""
    if k is None:
        k = hyb_width(np.bincount(m.rows, minlength=m.num_rows))
    slot = _slot_in_row(m.rows, m.num_rows)
    in_ell = slot < k
    ell_src = CooMatrix(m.num_rows, m.num_cols, m.rows[in_ell], m.cols[in_ell], m.values[in_ell])
    coo = CooMatrix(m.num_rows, m.num_cols, m.rows[~in_ell], m.cols[~in_ell], m.values[~in_ell])
    return HybMatrix(coo_to_ell(ell_src, k), coo, int(k))


def hyb_to_coo(m: HybMatrix) -> CooMatrix:
    e = ell_to_coo(m.ell_part)
    c = m.coo_part
    return CooMatrix.from_entries(e.num_rows, e.num_cols,
                                  np.concatenate([e.rows, c.rows]),
                                  np.concatenate([e.cols, c.cols]),
                                  np.concatenate([e.values, c.values]), m.dtype)


def hyb_width(row_lengths, breakeven=3):
    """ELL width for HYB: the largest k such that at least a third of the rows
    have k or more entries (the usual HYB heuristic)."""
    row_lengths = np.asarray(row_lengths)
    if row_lengths.size == 0:
        return 0
    need = max(1, row_lengths.size // breakeven)
    hist = np.bincount(row_lengths)
    at_least = np.cumsum(hist[::-1])[::-1]  # at_least[k] = rows with len >= k
    ok = np.flatnonzero(at_least >= need)
    return int(ok.max()) if ok.size else 0


def _slot_in_row(rows, num_rows):
    """Position of each entry within its row, for canonical (row-sorted) input."""
    counts = np.bincount(rows, minlength=num_rows)
    starts = np.zeros(num_rows, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    return np.arange(rows.size, dtype=np.int64) - starts[rows]


# --- utilities -------------------------------------------------------------

def transpose(m: CsrMatrix) -> CsrMatrix:
    coo = csr_to_coo(m)
    t = CooMatrix.from_entries(m.num_cols, m.num_rows, coo.cols, coo.rows, coo.values, m.dtype)
    return coo_to_csr(t)


def _check_nonnegative(m):
    if m.nnz and m.values.min() < 0:
        raise ValueError("normalization requires non-negative entries")


def row_normalize(m: CsrMatrix) -> CsrMatrix:
    """Scale every nonempty row to sum to 1; empty rows stay empty."""
    _check_nonnegative(m)
    rows = m.row_indices()
    sums = np.zeros(m.num_rows, dtype=m.dtype)
    np.add.at(sums, rows, m.values)
    scale = np.where(sums > 0, sums, 1)
    return CsrMatrix(m.num_rows, m.num_cols, m.row_ptr, m.col_idx, m.values / scale[rows])


def column_normalize(m: CsrMatrix) -> CsrMatrix:
    """Scale every nonempty column to sum to 1; empty columns stay empty."""
    _check_nonnegative(m)
    sums = np.zeros(m.num_cols, dtype=m.dtype)
    np.add.at(sums, m.col_idx, m.values)
    scale = np.where(sums > 0, sums, 1)
    return CsrMatrix(m.num_rows, m.num_cols, m.row_ptr, m.col_idx, m.values / scale[m.col_idx])


def symmetrize_pattern(m: CsrMatrix) -> CsrMatrix:
    """Undirected 0/1 adjacency: an entry wherever m[i, j] or m[j, i] is nonzero."""
    if m.num_rows != m.num_cols:
        raise ValueError("symmetrization needs a square matrix")
    coo = csr_to_coo(m)
    keep = coo.values != 0
    r = np.concatenate([coo.rows[keep], coo.cols[keep]])
    c = np.concatenate([coo.cols[keep], coo.rows[keep]])
    merged = CooMatrix.from_entries(m.num_rows, m.num_cols, r, c, np.ones(r.size), m.dtype)
    ones = np.ones(merged.nnz, dtype=m.dtype)
    return coo_to_csr(CooMatrix(m.num_rows, m.num_cols, merged.rows, merged.cols, ones))


def select_rows(m: CsrMatrix, rows) -> CsrMatrix:
    """Sub-matrix of the given rows (in the given order), all columns kept."""
    rows = np.asarray(rows, dtype=np.int64)
    lengths = m.row_lengths()[rows]
    row_ptr = np.zeros(rows.size + 1, dtype=np.int64)
    np.cumsum(lengths, out=row_ptr[1:])
    take = concat_ranges(m.row_ptr[rows], lengths)
    return CsrMatrix(rows.size, m.num_cols, row_ptr, m.col_idx[take], m.values[take])


def concat_ranges(starts, lengths):
    """Concatenation of arange(s, s + n) for every (s, n) pair."""
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(lengths)
    offsets = np.repeat(starts - (ends - lengths), lengths)
    return np.arange(total, dtype=np.int64) + offsets


def dense_spmv_oracle(m, x) -> np.ndarray:
    """Reference y = A x with zeros materialised, one full column at a time.

    Every row sums its terms strictly left to right over the column index,
    zero terms included.
    """
    coo = as_coo(m)
    x = np.asarray(x)
    if x.shape != (coo.num_cols,):
        raise ValueError(f"x has shape {x.shape}, expected ({coo.num_cols},)")
    dt = coo.dtype
    x = x.astype(dt)
    y = np.zeros(coo.num_rows, dtype=dt)
    order = np.argsort(coo.cols, kind="stable")
    bounds = np.searchsorted(coo.cols[order], np.arange(coo.num_cols + 1))
    column = np.zeros(coo.num_rows, dtype=dt)
    for j in range(coo.num_cols):
        sel = order[bounds[j]:bounds[j + 1]]
        column[:] = 0
        column[coo.rows[sel]] = coo.values[sel]
        y += column * x[j]
    return y
