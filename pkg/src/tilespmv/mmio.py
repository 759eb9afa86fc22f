"""Matrix Market coordinate files: read and write."""

from __future__ import annotations

import io
import os

import numpy as np

from .matrix import CooMatrix

FIELDS = ("real", "integer", "pattern")
SYMMETRIES = ("general", "symmetric", "skew-symmetric")


class MatrixMarketError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def parse_matrix_market(stream, dtype="float64") -> CooMatrix:
    """Parse a coordinate Matrix Market stream (text or file-like).

    Indices are shifted to 0-based, symmetric files are expanded to both
    triangles and pattern entries get the value 1.0. Duplicates are summed.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = iter(enumerate(stream, start=1))

    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MatrixMarketError("empty input", 1) from None
    tokens = header.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
        raise MatrixMarketError("malformed banner", lineno)
    fmt, fld, sym = tokens[2:]
    if fmt != "coordinate":
        raise MatrixMarketError(f"only coordinate format is supported, got {fmt!r}", lineno)
    if fld not in FIELDS:
        raise MatrixMarketError(f"unsupported field {fld!r}", lineno)
    if sym not in SYMMETRIES:
        raise MatrixMarketError(f"unsupported symmetry {sym!r}", lineno)

    size_line = None
    for lineno, line in lines:
        s = line.strip()
        if s and not s.startswith("%"):
            size_line = s
            break
    if size_line is None:
        raise MatrixMarketError("missing size line", lineno)
    try:
        nrows, ncols, nnz = (int(t) for t in size_line.split())
    except ValueError:
        raise MatrixMarketError("size line must hold three integers", lineno) from None
    if min(nrows, ncols, nnz) < 0:
        raise MatrixMarketError("negative size", lineno)

    want = 2 if fld == "pattern" else 3
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.ones(nnz, dtype=np.float64)
    count = 0
    for lineno, line in lines:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != want:
            raise MatrixMarketError(f"expected {want} fields, got {len(parts)}", lineno)
        if count >= nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise MatrixMarketError("non-integer index", lineno) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"index ({i}, {j}) outside {nrows}x{ncols}", lineno)
        if want == 3:
            try:
                vals[count] = float(parts[2])
            except ValueError:
                raise MatrixMarketError(f"non-numeric value {parts[2]!r}", lineno) from None
        rows[count] = i - 1
        cols[count] = j - 1
        count += 1
    if count != nnz:
        raise MatrixMarketError(f"declared {nnz} entries, found {count}", lineno)

    if sym != "general":
        off = rows != cols
        sign = -1.0 if sym == "skew-symmetric" else 1.0
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, sign * vals[off]]))
    return CooMatrix.from_entries(nrows, ncols, rows, cols, vals, dtype)


def read_matrix_market(path, dtype="float64") -> CooMatrix:
    with open(path, "r", encoding="ascii") as fh:
        return parse_matrix_market(fh, dtype)


def format_matrix_market(m: CooMatrix, field="real", comment=None) -> str:
    """Render a general coordinate file. Values use repr() so they round-trip exactly."""
    if field not in FIELDS:
        raise ValueError(f"unsupported field {field!r}")
    out = io.StringIO()
    out.write(f"%%MatrixMarket matrix coordinate {field} general\n")
    if comment:
        for line in comment.splitlines():
            out.write(f"% {line}\n")
    out.write(f"{m.num_rows} {m.num_cols} {m.nnz}\n")
    rows = (m.rows + 1).tolist()
    cols = (m.cols + 1).tolist()
    if field == "pattern":
        out.writelines(f"{i} {j}\n" for i, j in zip(rows, cols))
    elif field == "integer":
        out.writelines(f"{i} {j} {int(v)}\n" for i, j, v in zip(rows, cols, m.values.tolist()))
    else:
        out.writelines(f"{i} {j} {v!r}\n" for i, j, v in zip(rows, cols, m.values.tolist()))
    return out.getvalue()


def write_matrix_market(m: CooMatrix, path, field="real", comment=None):
    text = format_matrix_market(m, field, comment)
    with open(os.fspath(path), "w", encoding="ascii") as fh:
        fh.write(text)
