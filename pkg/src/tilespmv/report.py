"""Figures and tables for batch reports. Every plot is written as an SVG
next to a CSV holding the plotted numbers."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .matrix import DegreeHistogram, as_csr  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (4.5, 3.2),
    "svg.hashsalt": "tilespmv",   # stable element ids, so reruns are byte-identical
    "svg.fonttype": "none",
}


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def degree_histogram(m, out_dir, name="degrees"):
    """Row and column degree frequencies on log-log axes."""
    m = as_csr(m)
    rows = DegreeHistogram.frequency(m.row_lengths())
    cols = DegreeHistogram.frequency(m.col_lengths())
    table = []
    for kind, (deg, cnt) in (("row", rows), ("col", cols)):
        table += [(kind, int(d), int(c)) for d, c in zip(deg, cnt)]
    write_csv(os.path.join(out_dir, name + ".csv"), ["axis", "degree", "count"], table)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for label, (deg, cnt), marker in (("rows", rows, "o"), ("columns", cols, "s")):
            keep = deg > 0
            ax.loglog(deg[keep], cnt[keep], marker, ms=3, label=label, alpha=0.7)
        ax.set_xlabel("nonzeros per line")
        ax.set_ylabel("number of lines")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, os.path.join(out_dir, name + ".svg"))


def tile_nnz(tiled, out_dir, name="tiles"):
    """Nonzeros and distinct x entries per tile of a TiledCompositeMatrix."""
    rows = []
    for p in tiled.packed:
        t = p.tile
        label = "remainder" if t.is_remainder else str(t.tile_id)
        rows.append((label, t.nnz, t.num_rows, int(np.unique(t.cols).size), len(p.workloads),
                     p.workload_size))
    write_csv(os.path.join(out_dir, name + ".csv"),
              ["tile", "nnz", "rows", "distinct_cols", "workloads", "workload_size"], rows)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        x = np.arange(len(rows))
        ax.bar(x, [r[1] for r in rows], color="0.4", label="nonzeros")
        ax.plot(x, [r[3] for r in rows], "k.", label="distinct x")
        ax.set_xticks(x, [r[0] for r in rows], rotation=90)
        ax.set_ylabel("count")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, os.path.join(out_dir, name + ".svg"))


def workload_shapes(tiled, out_dir, name="workloads"):
    """Scatter of padded workload shapes, one point per distinct (w, h)."""
    counts = {}
    for p in tiled.packed:
        for wl in p.workloads:
            key = (wl.w_pad, wl.h_pad, wl.order)
            counts[key] = counts.get(key, 0) + 1
    rows = [(w, h, o, c) for (w, h, o), c in sorted(counts.items())]
    write_csv(os.path.join(out_dir, name + ".csv"), ["w_pad", "h_pad", "order", "count"], rows)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for order, marker in (("row", "o"), ("col", "^")):
            sel = [r for r in rows if r[2] == order]
            if sel:
                ax.scatter([r[0] for r in sel], [r[1] for r in sel],
                           s=[8 + 4 * np.log2(r[3]) for r in sel], marker=marker,
                           label=f"{order}-major", alpha=0.7)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log", base=2)
        ax.set_xlabel("w (padded)")
        ax.set_ylabel("h (padded)")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, os.path.join(out_dir, name + ".svg"))


def perf_heatmap(table, out_dir, name="perftable", max_side=None):
    """Throughput over (w, h) for every shape in the table's domain."""
    entries = sorted((w, h, table.lookup(w, h)) for w, h in table.domain())
    write_csv(os.path.join(out_dir, name + ".csv"), ["w", "h", "throughput"], entries)
    ws = sorted({e[0] for e in entries})
    hs = sorted({e[1] for e in entries})
    if max_side:
        ws, hs = ws[:max_side], hs[:max_side]
    wi = {w: i for i, w in enumerate(ws)}
    hi = {h: i for i, h in enumerate(hs)}
    grid = np.full((len(hs), len(ws)), np.nan)
    for w, h, t in entries:
        if w in wi and h in hi:
            grid[hi[h], wi[w]] = t
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        im = ax.imshow(np.log10(grid), origin="lower", aspect="auto", interpolation="nearest",
                       extent=(-0.5, len(ws) - 0.5, -0.5, len(hs) - 0.5))
        fig.colorbar(im, ax=ax, label="log10 throughput")
        ax.set_xlabel("w index")
        ax.set_ylabel("h index")
        fig.tight_layout()
        return _save(fig, os.path.join(out_dir, name + ".svg"))


def residual_curves(histories, out_dir, name="residuals"):
    """L1 residual per iteration; ``histories`` maps a label to a list."""
    rows = [(label, i + 1, r) for label, hist in histories.items() for i, r in enumerate(hist)]
    write_csv(os.path.join(out_dir, name + ".csv"), ["run", "iteration", "residual"], rows)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for label, hist in histories.items():
            ax.semilogy(np.arange(1, len(hist) + 1), np.maximum(hist, 1e-300), label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("L1 change")
        if histories:
            ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, os.path.join(out_dir, name + ".svg"))
