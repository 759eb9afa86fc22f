"""Tile-composite sparse matrix-vector multiplication for power-law matrices,
with a shape-table performance model, auto-tuning, graph mining solvers and
a simulated multi-device row partition."""

__version__ = "0.1.0"

from .hardware import HardwareProfile
from .matrix import CooMatrix, CsrMatrix, EllMatrix, HybMatrix, dense_spmv_oracle
from .transform import build_tile_composite, build_tile_coo, sort_columns_desc
from .kernels import spmv_tile_composite
from .perfmodel import AnalyticPerfTable, PerfTable, build_perf_table, predict_time
from .autotune import TuningPlan, choose_tiles, tune_workload
from .mining import SolverConfig, hits, pagerank, rwr
from .distrib import bitonic_partition, distributed_pagerank, distributed_spmv

__all__ = [
    "HardwareProfile", "CooMatrix", "CsrMatrix", "EllMatrix", "HybMatrix", "dense_spmv_oracle",
    "build_tile_composite", "build_tile_coo", "sort_columns_desc", "spmv_tile_composite",
    "AnalyticPerfTable", "PerfTable", "build_perf_table", "predict_time",
    "TuningPlan", "choose_tiles", "tune_workload",
    "SolverConfig", "hits", "pagerank", "rwr",
    "bitonic_partition", "distributed_pagerank", "distributed_spmv",
]
