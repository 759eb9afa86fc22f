"""Command-line driver: ``tilespmv <command> [options]``.

Exit status: 0 success, 2 usage error, 3 bad input, 4 model or table error.
Every option can also come from a ``--config`` file of ``key = value``
lines, keys spelled like the long option (dashes or underscores); options
given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .autotune import TuningError, TuningPlan, choose_tiles, synthetic_tables
from .distrib import (TRANSPORTS, PartitionError, PartitionPlan, bitonic_partition,
                      distributed_pagerank)
from .generators import VALUE_KINDS, generate_power_law, generate_uniform
from .hardware import HardwareProfile
from .kernels import IntegrityError
from .matrix import FormatError
from .mining import (SOLVER_BACKENDS, SolverConfig, SpmvOperator, hits, hits_block_matrix,
                     pagerank, pagerank_operator_matrix, rwr_batch, rwr_operator_matrix)
from .mmio import MatrixMarketError, write_matrix_market
from .perfmodel import (DEFAULT_UPPER_BOUND, MODES, AnalyticPerfTable, TableError,
                        WorkloadBoundError, build_perf_table, load_table, save_table)
from .store import STORE_FORMATS, load_matrix, save_matrix
from .transform import DEFAULT_TILE_WIDTH, LayoutError, sort_columns_desc

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_MODEL = 0, 2, 3, 4
INPUT_ERRORS = (OSError, MatrixMarketError, FormatError, PartitionError, json.JSONDecodeError)
MODEL_ERRORS = (TableError, WorkloadBoundError, LayoutError, TuningError, IntegrityError)
OPERATORS = ("matrix", "pagerank", "hits", "rwr")


class InputError(Exception):
    pass


# --- helpers ---------------------------------------------------------------

def _positive(kind):
    def conv(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {s}")
        return v
    return conv


def _unit(s):
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {s}")
    return v


def _hardware(args) -> HardwareProfile:
    hw = HardwareProfile.load(args.hardware) if args.hardware else HardwareProfile()
    if args.warp_size:
        d = hw.to_dict()
        d["warp_size"] = args.warp_size
        hw = HardwareProfile.from_dict(d)
    return hw


def _emit(text, path=None):
    if path:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True)


def _read_vector(args, n):
    if args.x_file:
        x = np.loadtxt(args.x_file, delimiter=args.delimiter, ndmin=1)
    elif args.x:
        x = np.array([float(v) for v in args.x.split(",")])
    else:
        x = np.ones(n)
    if x.size != n:
        raise InputError(f"x has {x.size} entries, matrix has {n} columns")
    return x


def _operator_matrix(m, which):
    if which == "pagerank":
        return pagerank_operator_matrix(m)
    if which == "hits":
        return hits_block_matrix(m)
    if which == "rwr":
        return rwr_operator_matrix(m)
    return m


def _tables(args, hw):
    if args.table:
        cached = load_table(args.table, hw, args.force)
    else:
        cached = None
    if args.uncached_table:
        uncached = load_table(args.uncached_table, hw, args.force)
    else:
        uncached = None
    if cached is None:
        cached, syn_uncached = synthetic_tables(hw)
        uncached = uncached or syn_uncached
    return cached, uncached or cached


def _plan(args, hw):
    if getattr(args, "plan", None):
        plan = TuningPlan.load(args.plan)
        if plan.hardware != hw and not args.force:
            raise TableError("tuning plan was made for a different hardware profile")
        return plan
    return None


def _solver_config(args, hw, plan=None):
    return SolverConfig(damping=args.damping, tolerance=args.tol, max_iterations=args.max_iters,
                        backend=args.backend, tile_width=args.tile_width, hardware=hw,
                        plan=plan, workers=args.workers)


def _write_rank(prefix, name, rank, top):
    np.save(f"{prefix}.{name}.npy", rank.values)
    with open(f"{prefix}.{name}.residuals.csv", "w") as fh:
        fh.write("iteration,residual\n")
        for i, r in enumerate(rank.residuals, 1):
            fh.write(f"{i},{r!r}\n")
    summary = {"iterations": rank.iterations, "converged": rank.converged,
               "final_residual": rank.residuals[-1] if rank.residuals else None,
               "top": [{"node": i, "score": s} for i, s in rank.top(top)]}
    _emit(_dump(summary), f"{prefix}.{name}.json")
    return summary


def _print_summary(name, rank, sep):
    print(sep.join(["result", "iterations", "converged", "final_residual"]))
    res = rank.residuals[-1] if rank.residuals else float("nan")
    print(sep.join([name, str(rank.iterations), str(rank.converged).lower(), repr(res)]))


# --- commands --------------------------------------------------------------

def cmd_generate(args):
    if args.kind == "power-law":
        m = generate_power_law(args.n, args.alpha, args.nnz, args.seed, args.values)
    else:
        m = generate_uniform(args.n, args.n, args.nnz, args.seed, args.values)
    write_matrix_market(m, args.output, comment=f"generated {args.kind} seed={args.seed}")
    return EXIT_OK


def cmd_convert(args):
    m = load_matrix(args.input, args.dtype)
    plan = None
    if args.to == "tile-composite":
        hw = _hardware(args)
        plan = _plan(args, hw)
        if plan is None:
            cached, uncached = _tables(args, hw)
            plan = choose_tiles(sort_columns_desc(m), args.tile_width, cached, hw, uncached)
    save_matrix(args.output, m, args.to, plan, args.remainder)
    return EXIT_OK


def cmd_bench_table(args):
    hw = _hardware(args)
    if args.analytic:
        table = AnalyticPerfTable(hw, args.upper_bound, args.mode)
    else:
        def progress(k, total):
            if args.verbose and (k == total or k % 100 == 0):
                print(f"{k}/{total} shapes", file=sys.stderr)
        table = build_perf_table(hw, args.upper_bound, args.mode, args.waves, args.reps,
                                 args.seed, progress=progress, rounds=args.rounds)
        if table.invalid:
            print(f"warning: {len(table.invalid)} cells failed to time", file=sys.stderr)
    save_table(table, args.output)
    return EXIT_OK


def cmd_tune(args):
    hw = _hardware(args)
    m = _operator_matrix(load_matrix(args.input, args.dtype), args.operator)
    cached, uncached = _tables(args, hw)
    plan = choose_tiles(sort_columns_desc(m), args.tile_width, cached, hw, uncached)
    _emit(plan.to_json(), args.output)
    return EXIT_OK


def cmd_spmv(args):
    hw = _hardware(args)
    m = load_matrix(args.input, args.dtype)
    x = _read_vector(args, m.num_cols)
    op = SpmvOperator(m, args.backend, hw, args.tile_width, _plan(args, hw), args.workers)
    y = op(x.astype(m.dtype))
    sep = args.delimiter
    lines = ["row" + sep + "y"] + [f"{i}{sep}{v!r}" for i, v in enumerate(y.tolist())]
    _emit("\n".join(lines), args.output)
    if args.stats:
        stats = op.stats.to_dict() if op.stats is not None else {"flops": 2 * m.nnz}
        stats["backend"] = args.backend
        _emit(_dump(stats), args.stats)
    return EXIT_OK


def cmd_pagerank(args):
    hw = _hardware(args)
    m = load_matrix(args.input, args.dtype)
    rank = pagerank(m, _solver_config(args, hw, _plan(args, hw)))
    if args.output_prefix:
        _write_rank(args.output_prefix, "pagerank", rank, args.top)
    _print_summary("pagerank", rank, args.delimiter)
    return EXIT_OK


def cmd_hits(args):
    hw = _hardware(args)
    m = load_matrix(args.input, args.dtype)
    auth, hub = hits(m, _solver_config(args, hw, _plan(args, hw)))
    if args.output_prefix:
        _write_rank(args.output_prefix, "authority", auth, args.top)
        _write_rank(args.output_prefix, "hub", hub, args.top)
    _print_summary("hits", auth, args.delimiter)
    return EXIT_OK


def cmd_rwr(args):
    hw = _hardware(args)
    m = load_matrix(args.input, args.dtype)
    for q in args.query:
        if not 0 <= q < m.num_rows:
            raise InputError(f"query node {q} out of range for {m.num_rows} nodes")
    ranks = rwr_batch(m, args.query, _solver_config(args, hw, _plan(args, hw)), args.workers)
    sep = args.delimiter
    print(sep.join(["query", "iterations", "converged", "final_residual"]))
    for q, r in zip(args.query, ranks):
        if args.output_prefix:
            _write_rank(args.output_prefix, f"rwr{q}", r, args.top)
        print(sep.join([str(q), str(r.iterations), str(r.converged).lower(), repr(r.residuals[-1])]))
    return EXIT_OK


def cmd_partition(args):
    m = _operator_matrix(load_matrix(args.input, args.dtype), args.operator)
    plan = bitonic_partition(m, args.parts)
    _emit(plan.to_json(), args.output)
    return EXIT_OK


def cmd_dist_pagerank(args):
    hw = _hardware(args)
    m = load_matrix(args.input, args.dtype)
    plan = args.parts
    if args.partition:
        with open(args.partition) as fh:
            plan = PartitionPlan.from_dict(json.load(fh))
    rank, history = distributed_pagerank(plan, m, _solver_config(args, hw), args.transport)
    if args.output_prefix:
        _write_rank(args.output_prefix, "dist_pagerank", rank, args.top)
        _emit(_dump({"rounds": [h.to_dict() for h in history]}), f"{args.output_prefix}.comm.json")
    _print_summary("dist-pagerank", rank, args.delimiter)
    sep = args.delimiter
    print(sep.join(["rounds", "elements_per_round"]))
    print(sep.join([str(len(history)), str(history[0].total if history else 0)]))
    return EXIT_OK


def cmd_report(args):
    from . import report

    hw = _hardware(args)
    m = load_matrix(args.input, args.dtype)
    os.makedirs(args.output_dir, exist_ok=True)
    written = [report.degree_histogram(m, args.output_dir)]
    plan = _plan(args, hw)
    cached, uncached = _tables(args, hw)
    if plan is None:
        plan = choose_tiles(sort_columns_desc(m), args.tile_width, cached, hw, uncached)
    tiled = plan.build(m)
    written.append(report.tile_nnz(tiled, args.output_dir))
    written.append(report.workload_shapes(tiled, args.output_dir))
    if args.table:
        written.append(report.perf_heatmap(cached, args.output_dir))
    if args.residuals:
        hist = {}
        for path in args.residuals:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            hist[os.path.basename(path)] = data[:, 1].tolist()
        written.append(report.residual_curves(hist, args.output_dir))
    for path in written:
        print(path)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="key = value file supplying defaults for any option")
    g.add_argument("--hardware", help="hardware profile JSON (default: 30 SMs x 32 warps x 32 lanes)")
    g.add_argument("--warp-size", type=_positive(int), help="override the profile's warp size")
    g.add_argument("--tile-width", type=_positive(int), default=DEFAULT_TILE_WIDTH,
                   help="columns per dense tile (default %(default)s)")
    g.add_argument("--workers", type=_positive(int), default=1, help="worker threads")
    g.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    g.add_argument("--delimiter", default=",", help="field separator for tabular output")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true",
                   help="accept tables or plans recorded for other hardware")
    g.add_argument("-v", "--verbose", action="store_true")

    tables = argparse.ArgumentParser(add_help=False)
    tables.add_argument("--table", help="cached perf table JSON (default: analytic)")
    tables.add_argument("--uncached-table", help="perf table for the sparse remainder")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--backend", choices=SOLVER_BACKENDS, default="csr")
    solver.add_argument("--damping", type=_unit, help="damping (PageRank) or restart (RWR) factor")
    solver.add_argument("--tol", type=_positive(float), default=1e-8, help="L1 stopping tolerance")
    solver.add_argument("--max-iters", type=_positive(int), default=1000)
    solver.add_argument("--output-prefix", help="write <prefix>.*.npy/.csv/.json")
    solver.add_argument("--top", type=_positive(int), default=10, help="top-k entries in JSON")

    planned = argparse.ArgumentParser(add_help=False)
    planned.add_argument("--plan", help="tuning plan JSON for the tile-composite backend")

    p = argparse.ArgumentParser(prog="tilespmv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, parents, help):
        s = sub.add_parser(name, parents=[common] + parents, help=help, description=help)
        s.set_defaults(func=func)
        return s

    s = add("generate", cmd_generate, [], "write a synthetic matrix as Matrix Market")
    s.add_argument("output")
    s.add_argument("--kind", choices=("power-law", "uniform"), default="power-law")
    s.add_argument("--n", type=_positive(int), default=10000)
    s.add_argument("--nnz", type=_positive(int), default=100000)
    s.add_argument("--alpha", type=float, default=2.1)
    s.add_argument("--values", choices=VALUE_KINDS, default="ones")

    s = add("convert", cmd_convert, [tables, planned], "convert a matrix between storage formats")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--to", choices=STORE_FORMATS, default="csr")
    s.add_argument("--remainder", choices=("composite", "hyb"), default="composite",
                   help="storage of the sparse remainder in tile-composite output")

    s = add("bench-table", cmd_bench_table, [], "build a workload-shape performance table")
    s.add_argument("output")
    s.add_argument("--mode", choices=MODES, default="cached")
    s.add_argument("--upper-bound", type=_positive(int), default=DEFAULT_UPPER_BOUND)
    s.add_argument("--waves", type=_positive(int), default=2,
                   help="benchmark size in multiples of the resident warp count")
    s.add_argument("--reps", type=_positive(int), default=5, help="timings per cell (fastest is kept)")
    s.add_argument("--rounds", type=_positive(int), default=1,
                   help="repeat the whole sweep, keeping each cell's fastest time")
    s.add_argument("--analytic", action="store_true", help="write the closed-form table instead")

    s = add("tune", cmd_tune, [tables], "choose tile count and workload sizes")
    s.add_argument("input")
    s.add_argument("-o", "--output")
    s.add_argument("--operator", choices=OPERATORS, default="matrix",
                   help="tune the matrix a solver multiplies by instead of the input itself")

    s = add("spmv", cmd_spmv, [planned], "one multiply y = A x")
    s.add_argument("input")
    s.add_argument("--backend", choices=SOLVER_BACKENDS, default="tile-composite")
    s.add_argument("--x", help="comma-separated x (default all ones)")
    s.add_argument("--x-file", help="text file with x, one value per line")
    s.add_argument("-o", "--output", help="write y here instead of stdout")
    s.add_argument("--stats", help="write execution counters as JSON")

    for name, func, help in (("pagerank", cmd_pagerank, "PageRank"),
                             ("hits", cmd_hits, "HITS hubs and authorities")):
        s = add(name, func, [solver, planned], help)
        s.add_argument("input")

    s = add("rwr", cmd_rwr, [solver, planned], "random walk with restart")
    s.add_argument("input")
    s.add_argument("--query", type=int, nargs="+", required=True)

    s = add("partition", cmd_partition, [], "bitonic row partition")
    s.add_argument("input")
    s.add_argument("--parts", type=_positive(int), required=True)
    s.add_argument("--operator", choices=OPERATORS, default="matrix")
    s.add_argument("-o", "--output")

    s = add("dist-pagerank", cmd_dist_pagerank, [solver], "PageRank on simulated devices")
    s.add_argument("input")
    s.add_argument("--parts", type=_positive(int), default=2)
    s.add_argument("--partition", help="PartitionPlan JSON over the rows of the PageRank operator matrix")
    s.add_argument("--transport", choices=TRANSPORTS, default="inproc")

    s = add("report", cmd_report, [tables, planned], "render figures (SVG) and their data (CSV)")
    s.add_argument("input")
    s.add_argument("output_dir")
    s.add_argument("--residuals", nargs="*", help="residual CSVs from solver runs")
    return p


def read_config(path):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v.strip("\"'")
    return out


def apply_config(parser, path):
    """Install values from a config file as defaults on every subcommand."""
    values = read_config(path)
    used = set()
    for sub in parser._subparsers._group_actions[0].choices.values():
        defaults = {}
        for action in sub._actions:
            if action.dest not in values or not action.option_strings:
                continue
            raw = values[action.dest]
            used.add(action.dest)
            if isinstance(action, argparse._StoreTrueAction):
                val = raw.lower() in ("1", "true", "yes", "on")
            elif action.nargs in ("+", "*"):
                val = [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
            else:
                val = action.type(raw) if action.type else raw
            for v in (val if isinstance(val, list) else [val]):
                if action.choices is not None and v not in action.choices:
                    raise InputError(f"config {action.dest}: {v!r} not in {list(action.choices)}")
            defaults[action.dest] = val
            action.required = False
        sub.set_defaults(**defaults)
    unknown = set(values) - used - {"config"}
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            apply_config(parser, known.config)
        args = parser.parse_args(argv)
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except MODEL_ERRORS as e:
        print(f"model error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (ValueError, argparse.ArgumentTypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
