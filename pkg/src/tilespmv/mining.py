"""PageRank, HITS and random walk with restart over any SpMV backend."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .hardware import HardwareProfile
from .kernels import (spmv_coo, spmv_csr_scalar, spmv_csr_vector, spmv_ell, spmv_hyb,
                      spmv_tile_composite, spmv_tile_coo)
from .matrix import (CooMatrix, CsrMatrix, as_csr, column_normalize, coo_to_ell, coo_to_hyb,
                     csr_to_coo, row_normalize, symmetrize_pattern, transpose)
from .transform import DEFAULT_TILE_WIDTH, build_tile_coo, sort_columns_desc

SOLVER_BACKENDS = ("csr", "csr-vector", "ell", "coo", "hyb", "tile-coo", "tile-composite")
PAGERANK_DAMPING = 0.85
RWR_RESTART = 0.9


@dataclass
class SolverConfig:
    """Iteration settings shared by the solvers.

    ``damping=None`` picks the algorithm default (0.85 for PageRank, 0.9
    for RWR). ``plan`` is an optional TuningPlan for the tile-composite
    operator; without one the operator is auto-tuned on analytic tables.
    """

    damping: float | None = None
    tolerance: float = 1e-8
    max_iterations: int = 1000
    backend: str = "csr"
    tile_width: int = DEFAULT_TILE_WIDTH
    hardware: HardwareProfile = field(default_factory=HardwareProfile)
    plan: object = None
    workers: int = 1

    def __post_init__(self):
        if self.damping is not None and not 0.0 <= self.damping <= 1.0:
            raise ValueError(f"damping must lie in [0, 1], got {self.damping}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.backend not in SOLVER_BACKENDS:
            raise ValueError(f"backend must be one of {SOLVER_BACKENDS}")

    def damping_or(self, default):
        return default if self.damping is None else self.damping


@dataclass
class RankVector:
    values: np.ndarray
    iterations: int
    converged: bool
    residuals: list = field(default_factory=list)

    def top(self, k=10):
        order = np.lexsort((np.arange(self.values.size), -self.values))[:k]
        return [(int(i), float(self.values[i])) for i in order]


class SpmvOperator:
    """A matrix prepared once for repeated y = M x with one backend."""

    def __init__(self, m, backend="csr", hw: HardwareProfile | None = None,
                 tile_width=DEFAULT_TILE_WIDTH, plan=None, workers=1):
        self.csr = as_csr(m)
        self.backend = backend
        self.hw = hw or HardwareProfile()
        self.workers = workers
        self.shape = self.csr.shape
        self.stats = None
        csr = self.csr
        if backend in ("csr", "csr-vector"):
            self.data = csr
        elif backend == "ell":
            self.data = coo_to_ell(csr_to_coo(csr))
        elif backend == "coo":
            self.data = csr_to_coo(csr)
        elif backend == "hyb":
            self.data = coo_to_hyb(csr_to_coo(csr))
        elif backend == "tile-coo":
            self.data = build_tile_coo(csr, tile_width)
        elif backend == "tile-composite":
            self.data = self._tile_composite(csr, tile_width, plan)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def _tile_composite(self, csr, tile_width, plan):
        from .autotune import choose_tiles, synthetic_tables

        sm = sort_columns_desc(csr)
        if plan is None:
            cached, uncached = synthetic_tables(self.hw)
            plan = choose_tiles(sm, tile_width, cached, self.hw, uncached)
        self.plan = plan
        return plan.build(csr, sorted_m=sm)

    def __call__(self, x):
        b, d = self.backend, self.data
        if b == "csr":
            return spmv_csr_scalar(d, x)
        if b == "csr-vector":
            return spmv_csr_vector(d, x, self.hw)
        if b == "ell":
            return spmv_ell(d, x)
        if b == "coo":
            return spmv_coo(d, x, self.hw)
        if b == "hyb":
            return spmv_hyb(d, x, self.hw)
        if b == "tile-coo":
            y, self.stats = spmv_tile_coo(d, x, self.hw)
            return y
        y, self.stats = spmv_tile_composite(d, x, self.hw, self.workers)
        return y


def make_operator(m, cfg: SolverConfig) -> SpmvOperator:
    return SpmvOperator(m, cfg.backend, cfg.hardware, cfg.tile_width, cfg.plan, cfg.workers)


def _square(adj):
    adj = as_csr(adj)
    if adj.num_rows != adj.num_cols:
        raise ValueError(f"expected a square adjacency matrix, got {adj.shape}")
    return adj


def _l1(a, b):
    return float(np.abs(a - b).sum())


# --- PageRank --------------------------------------------------------------

def pagerank_operator_matrix(adj) -> CsrMatrix:
    """Transpose of the row-normalised adjacency; dangling rows stay zero."""
    return transpose(row_normalize(_square(adj)))


def pagerank(adj, cfg: SolverConfig | None = None, operator=None, on_iteration=None) -> RankVector:
    """Damped power iteration over the transposed row-normalised graph, with
    teleport to the uniform start vector, until the L1 change
    drops below the tolerance."""
    cfg = cfg or SolverConfig()
    adj = _square(adj)
    damping = cfg.damping_or(PAGERANK_DAMPING)
    op = operator or make_operator(pagerank_operator_matrix(adj), cfg)
    n = adj.num_rows
    start = np.full(n, 1.0 / n, dtype=adj.dtype)
    return _iterate(lambda p: damping * op(p) + (1.0 - damping) * start, start, cfg, on_iteration)


def _iterate(step, start, cfg, on_iteration=None):
    p = start
    residuals = []
    for it in range(1, cfg.max_iterations + 1):
        nxt = step(p)
        res = _l1(nxt, p)
        residuals.append(res)
        p = nxt
        if on_iteration is not None:
            on_iteration(it, p, res)
        if res < cfg.tolerance:
            return RankVector(p, it, True, residuals)
    return RankVector(p, cfg.max_iterations, False, residuals)


# --- HITS ------------------------------------------------------------------

def hits_block_matrix(adj) -> CsrMatrix:
    """[[0, A^T], [A, 0]]: entry (r, c) of A lands at (n + r, c) and (c, n + r)."""
    adj = _square(adj)
    n = adj.num_rows
    coo = csr_to_coo(adj)
    rows = np.concatenate([n + coo.rows, coo.cols])
    cols = np.concatenate([coo.cols, n + coo.rows])
    vals = np.concatenate([coo.values, coo.values])
    return as_csr(CooMatrix.from_entries(2 * n, 2 * n, rows, cols, vals, adj.dtype))


def _normalize_half(v):
    s = v.sum()
    if s == 0:
        return np.full(v.size, 1.0 / v.size, dtype=v.dtype)
    return v / s


def hits(adj, cfg: SolverConfig | None = None, operator=None, on_iteration=None):
    """Authority and hub scores; returns (authority, hub) RankVectors.

    State is [a; h]; every iteration does one multiply by the block matrix
    and rescales each half to unit L1 norm.
    """
    cfg = cfg or SolverConfig()
    adj = _square(adj)
    n = adj.num_rows
    op = operator or make_operator(hits_block_matrix(adj), cfg)

    def step(x):
        y = op(x)
        return np.concatenate([_normalize_half(y[:n]), _normalize_half(y[n:])])

    start = np.full(2 * n, 1.0 / n, dtype=adj.dtype)
    r = _iterate(step, start, cfg, on_iteration)
    auth = RankVector(r.values[:n].copy(), r.iterations, r.converged, r.residuals)
    hub = RankVector(r.values[n:].copy(), r.iterations, r.converged, list(r.residuals))
    return auth, hub


# --- random walk with restart ---------------------------------------------

def rwr_operator_matrix(adj) -> CsrMatrix:
    """Column-normalised undirected adjacency."""
    return column_normalize(symmetrize_pattern(_square(adj)))


def rwr(adj, query, cfg: SolverConfig | None = None, operator=None, on_iteration=None) -> RankVector:
    """Walk the column-normalised undirected graph, restarting at ``query``
    with probability 1 - damping, starting from the query's indicator."""
    cfg = cfg or SolverConfig()
    adj = _square(adj)
    n = adj.num_rows
    if not 0 <= query < n:
        raise IndexError(f"query node {query} out of range for {n} nodes")
    damping = cfg.damping_or(RWR_RESTART)
    op = operator or make_operator(rwr_operator_matrix(adj), cfg)
    e = np.zeros(n, dtype=adj.dtype)
    e[query] = 1.0
    return _iterate(lambda r: damping * op(r) + (1.0 - damping) * e, e, cfg, on_iteration)


def rwr_batch(adj, queries, cfg: SolverConfig | None = None, workers=1):
    """Independent RWR solves sharing one prepared operator."""
    cfg = cfg or SolverConfig()
    op = make_operator(rwr_operator_matrix(adj), replace(cfg, workers=1))
    if workers > 1:
        # tile backends record per-call stats on the operator, so give each
        # worker its own copy of the (immutable) prepared data
        def solve(q):
            local = SpmvOperator.__new__(SpmvOperator)
            local.__dict__.update(op.__dict__)
            return rwr(adj, q, cfg, local)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve, queries))
    return [rwr(adj, q, cfg, op) for q in queries]
