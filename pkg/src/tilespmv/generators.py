"""Synthetic test matrices: power-law graphs and uniform random patterns."""

from __future__ import annotations

import numpy as np

from .matrix import CooMatrix

VALUE_KINDS = ("ones", "uniform", "signed")


def _values(rng, kind, size, dtype):
    if kind == "ones":
        return np.ones(size, dtype=dtype)
    if kind == "uniform":
        return rng.uniform(0.5, 1.5, size).astype(dtype)
    if kind == "signed":
        return rng.uniform(-1.0, 1.0, size).astype(dtype)
    raise ValueError(f"values must be one of {VALUE_KINDS}")


def _unique_pairs(rng, draw, n_rows, n_cols, target, max_rounds=64):
    """Collect ``target`` distinct (row, col) keys from repeated calls to ``draw``,
    keeping first-draw order; tops up uniformly if the sampler saturates."""
    keys = np.zeros(0, dtype=np.int64)
    total = n_rows * n_cols
    for _ in range(max_rounds):
        need = target - keys.size
        if need <= 0:
            break
        r, c = draw(int(need * 1.3) + 16)
        fresh = np.concatenate([keys, r * n_cols + c])
        _, first = np.unique(fresh, return_index=True)
        keys = fresh[np.sort(first)]
    if keys.size < target:
        present = np.zeros(total, dtype=bool)
        present[keys] = True
        missing = np.flatnonzero(~present)
        extra = rng.choice(missing, size=target - keys.size, replace=False)
        keys = np.concatenate([keys, extra])
    keys = keys[:target]
    return keys // n_cols, keys % n_cols


def generate_power_law(n, alpha, nnz_target, seed, values="ones", dtype="float64") -> CooMatrix:
    """Directed n-node graph whose in- and out-degrees follow p(d) ~ d^-alpha.

    Edges are drawn with endpoint probabilities proportional to fixed
    per-node weights w_i ~ (i + 1)^(-1/(alpha - 1)) (Chung-Lu), which yields
    a degree tail with exponent ``alpha``. Row and column weights are
    shuffled independently so in- and out-hubs differ. Duplicate edges are
    rejected, so the result has exactly ``nnz_target`` entries.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    if nnz_target < 0 or nnz_target > n * n:
        raise ValueError(f"nnz_target={nnz_target} exceeds n^2={n * n}")
    rng = np.random.default_rng(seed)
    w = (np.arange(1, n + 1, dtype=np.float64)) ** (-1.0 / (alpha - 1.0))
    p_row = rng.permutation(w)
    p_col = rng.permutation(w)
    p_row /= p_row.sum()
    p_col /= p_col.sum()

    def draw(k):
        return rng.choice(n, size=k, p=p_row), rng.choice(n, size=k, p=p_col)

    rows, cols = _unique_pairs(rng, draw, n, n, nnz_target)
    return CooMatrix.from_entries(n, n, rows, cols, _values(rng, values, rows.size, dtype), dtype)


def generate_uniform(num_rows, num_cols, nnz_target, seed, values="ones", dtype="float64") -> CooMatrix:
    """Erdos-Renyi style pattern: ``nnz_target`` distinct positions chosen uniformly."""
    if nnz_target < 0 or nnz_target > num_rows * num_cols:
        raise ValueError("nnz_target exceeds the number of positions")
    rng = np.random.default_rng(seed)

    def draw(k):
        return rng.integers(0, num_rows, k), rng.integers(0, num_cols, k)

    rows, cols = _unique_pairs(rng, draw, num_rows, num_cols, nnz_target)
    return CooMatrix.from_entries(num_rows, num_cols, rows, cols,
                                  _values(rng, values, rows.size, dtype), dtype)


def degree_slope(counts, bins_per_decade=5):
    """Least-squares slope of log(density) vs log(degree) over log-spaced bins.

    Empty bins are dropped; degree-0 lines are ignored.
    """
    counts = np.asarray(counts)
    d = counts[counts > 0].astype(np.float64)
    if d.size == 0 or d.max() <= 1:
        raise ValueError("degree distribution too narrow to fit")
    n_bins = max(2, int(np.ceil(np.log10(d.max() + 1) * bins_per_decade)))
    edges = np.unique(np.floor(np.logspace(0, np.log10(d.max() + 1), n_bins + 1)))
    hist, edges = np.histogram(d, bins=edges)
    width = np.diff(edges)
    centre = np.sqrt(edges[:-1] * np.maximum(edges[1:] - 1, edges[:-1]))
    keep = hist > 0
    x = np.log(centre[keep])
    y = np.log(hist[keep] / width[keep])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
