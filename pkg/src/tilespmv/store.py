"""On-disk matrix containers (.npz with a JSON header) and Matrix Market I/O."""

from __future__ import annotations

import json

import numpy as np

from .matrix import (CooMatrix, CsrMatrix, EllMatrix, FormatError, HybMatrix, as_coo, as_csr,
                     coo_to_ell, coo_to_hyb, ell_to_coo, hyb_to_coo)
from .mmio import read_matrix_market, write_matrix_market

STORE_SCHEMA_VERSION = 1
STORE_FORMATS = ("mtx", "csr", "coo", "ell", "hyb", "tile-composite")


def _meta(fmt, m, **extra):
    d = {"schema_version": STORE_SCHEMA_VERSION, "format": fmt,
         "shape": list(m.shape), "dtype": np.dtype(m.dtype).name}
    d.update(extra)
    return np.array(json.dumps(d, sort_keys=True))


def save_matrix(path, m, fmt="csr", plan=None, remainder_mode="composite"):
    """Write ``m`` in ``fmt``. Tile-composite stores the source entries and
    the tuning plan; loading re-packs it deterministically."""
    if fmt not in STORE_FORMATS:
        raise ValueError(f"format must be one of {STORE_FORMATS}")
    if fmt == "mtx":
        write_matrix_market(as_coo(m), path)
        return path
    coo = as_coo(m)
    if fmt == "csr":
        c = as_csr(coo)
        arrays = {"row_ptr": c.row_ptr, "col_idx": c.col_idx, "values": c.values}
        meta = _meta(fmt, c)
    elif fmt == "coo":
        arrays = {"rows": coo.rows, "cols": coo.cols, "values": coo.values}
        meta = _meta(fmt, coo)
    elif fmt == "ell":
        e = coo_to_ell(coo)
        arrays = {"col_idx": e.col_idx, "values": e.values}
        meta = _meta(fmt, coo, k=e.k)
    elif fmt == "hyb":
        h = coo_to_hyb(coo)
        arrays = {"ell_col_idx": h.ell_part.col_idx, "ell_values": h.ell_part.values,
                  "coo_rows": h.coo_part.rows, "coo_cols": h.coo_part.cols,
                  "coo_values": h.coo_part.values}
        meta = _meta(fmt, coo, k=h.k)
    else:
        if plan is None:
            raise ValueError("tile-composite storage needs a tuning plan")
        arrays = {"rows": coo.rows, "cols": coo.cols, "values": coo.values}
        meta = _meta(fmt, coo, plan=plan.to_dict(), remainder_mode=remainder_mode)
    with open(path, "wb") as fh:
        np.savez(fh, meta=meta, **arrays)
    return path


def read_store(path):
    """Return (meta dict, object) where the object is in its stored format."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("schema_version") != STORE_SCHEMA_VERSION:
            raise FormatError(f"unsupported store schema {meta.get('schema_version')!r}")
        fmt, (nr, nc) = meta["format"], meta["shape"]
        if fmt == "csr":
            obj = CsrMatrix(nr, nc, z["row_ptr"], z["col_idx"], z["values"])
        elif fmt in ("coo", "tile-composite"):
            obj = CooMatrix(nr, nc, z["rows"], z["cols"], z["values"])
        elif fmt == "ell":
            obj = EllMatrix(nr, nc, meta["k"], z["col_idx"], z["values"])
        elif fmt == "hyb":
            ell = EllMatrix(nr, nc, meta["k"], z["ell_col_idx"], z["ell_values"])
            obj = HybMatrix(ell, CooMatrix(nr, nc, z["coo_rows"], z["coo_cols"], z["coo_values"]),
                            meta["k"])
        else:
            raise FormatError(f"unknown stored format {fmt!r}")
    if fmt == "tile-composite":
        from .autotune import TuningPlan

        obj = TuningPlan.from_dict(meta["plan"]).build(obj, remainder_mode=meta["remainder_mode"])
    return meta, obj


def load_matrix(path, dtype="float64") -> CsrMatrix:
    """Any supported file as a CSR matrix."""
    if str(path).endswith(".npz"):
        meta, obj = read_store(path)
        if isinstance(obj, EllMatrix):
            obj = ell_to_coo(obj)
        elif isinstance(obj, HybMatrix):
            obj = hyb_to_coo(obj)
        return as_csr(obj).astype(dtype)
    return as_csr(read_matrix_market(path, dtype))
