"""Row-partitioned SpMV across simulated devices.

Rows are dealt to partitions with a serpentine ("bitonic") rule so that row
counts differ by at most one and nonzeros stay close to balanced. Every
partition multiplies its rows against the full x, then broadcasts its
segment of y to all other partitions.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .matrix import as_csr, select_rows
from .mining import SolverConfig, SpmvOperator, pagerank, pagerank_operator_matrix

PLAN_SCHEMA_VERSION = 1
TRANSPORTS = ("inproc", "socket")

# y-segment message: magic, version, partition, round, count, then count doubles
MAGIC = b"TSPY"
PROTOCOL_VERSION = 1
HEADER = struct.Struct(">4sHIII")


class PartitionError(ValueError):
    pass


@dataclass
class PartitionPlan:
    num_parts: int
    row_assignment: np.ndarray      # row -> partition
    row_counts: list
    nnz_counts: list
    trace: list = field(default_factory=list)   # per iteration: [(row, partition), ...]

    def rows_of(self, p):
        return np.flatnonzero(self.row_assignment == p)

    @property
    def num_rows(self):
        return int(self.row_assignment.size)

    def to_dict(self):
        return {
            "schema_version": PLAN_SCHEMA_VERSION,
            "num_parts": self.num_parts,
            "row_assignment": self.row_assignment.tolist(),
            "row_counts": list(self.row_counts),
            "nnz_counts": list(self.nnz_counts),
            "trace": [[list(pair) for pair in it] for it in self.trace],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != PLAN_SCHEMA_VERSION:
            raise PartitionError(f"unsupported partition plan schema {d.get('schema_version')!r}")
        trace = [[tuple(pair) for pair in it] for it in d.get("trace", [])]
        return cls(int(d["num_parts"]), np.asarray(d["row_assignment"], dtype=np.int64),
                   list(d["row_counts"]), list(d["nnz_counts"]), trace)


def bitonic_partition(m, num_parts) -> PartitionPlan:
    """Deal rows, longest first, in rounds of ``num_parts``.

    Round 0 gives the longest row to partition 0 and so on. In later rounds
    partitions are ranked by the length of the row they got in the previous
    round (longest first, ties by partition id) and receive this round's rows
    in ascending length, so last round's biggest winner gets the shortest.
    """
    m = as_csr(m)
    if num_parts < 1:
        raise PartitionError("need at least one partition")
    if num_parts > m.num_rows:
        raise PartitionError(f"{num_parts} partitions for only {m.num_rows} rows")
    lengths = m.row_lengths()
    order = np.lexsort((np.arange(m.num_rows), -lengths))
    assign = np.empty(m.num_rows, dtype=np.int64)
    prev = None
    trace = []
    for first in range(0, m.num_rows, num_parts):
        group = order[first:first + num_parts].tolist()
        if prev is None:
            pairs = list(zip(group, range(num_parts)))
        else:
            ranking = sorted(range(num_parts), key=lambda p: (-prev[p], p))
            pairs = list(zip(group[::-1], ranking))
        prev = [0] * num_parts
        for row, p in pairs:
            assign[row] = p
            prev[p] = int(lengths[row])
        trace.append(pairs)
    rows = np.bincount(assign, minlength=num_parts)
    nnz = np.bincount(assign, weights=lengths, minlength=num_parts).astype(np.int64)
    return PartitionPlan(num_parts, assign, rows.tolist(), nnz.tolist(),
                         [[(int(r), int(p)) for r, p in it] for it in trace])


@dataclass
class CommStats:
    """Elements of y each partition broadcasts in one round."""

    sent: list
    round: int = 0

    @property
    def total(self):
        return int(sum(self.sent))

    def to_dict(self):
        return {"round": self.round, "sent": list(self.sent), "total": self.total}


def expected_volume(plan: PartitionPlan):
    return sum(plan.row_counts) * (plan.num_parts - 1)


# --- messages --------------------------------------------------------------

def encode_segment(partition, rnd, values) -> bytes:
    values = np.asarray(values, dtype=">f8")
    return HEADER.pack(MAGIC, PROTOCOL_VERSION, partition, rnd, values.size) + values.tobytes()


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


def read_segment(sock):
    magic, version, partition, rnd, count = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if magic != MAGIC or version != PROTOCOL_VERSION:
        raise ConnectionError(f"bad segment header {magic!r} v{version}")
    values = np.frombuffer(_recv_exact(sock, 8 * count), dtype=">f8").astype(np.float64)
    return partition, rnd, values


def decode_segment(blob: bytes):
    magic, version, partition, rnd, count = HEADER.unpack_from(blob)
    if magic != MAGIC or version != PROTOCOL_VERSION:
        raise ValueError(f"bad segment header {magic!r} v{version}")
    values = np.frombuffer(blob, dtype=">f8", count=count, offset=HEADER.size)
    return partition, rnd, values.astype(np.float64)


class _SocketMesh:
    """One socketpair per ordered (sender, receiver) pair."""

    def __init__(self, num_parts):
        self.P = num_parts
        self.links = {}
        for s in range(num_parts):
            for r in range(num_parts):
                if s != r:
                    self.links[(s, r)] = socket.socketpair()

    def exchange(self, segments, rnd):
        """Every partition sends its segment to every other; returns what each
        receiver got, keyed by sender."""
        P = self.P
        got = [dict() for _ in range(P)]
        errors = []

        def send(s):
            blob = encode_segment(s, rnd, segments[s])
            for r in range(P):
                if r != s:
                    self.links[(s, r)][0].sendall(blob)

        def recv(r):
            for s in range(P):
                if s != r:
                    part, got_rnd, vals = read_segment(self.links[(s, r)][1])
                    if part != s or got_rnd != rnd:
                        errors.append(f"receiver {r}: expected ({s}, {rnd}), got ({part}, {got_rnd})")
                    got[r][s] = vals

        threads = [threading.Thread(target=send, args=(s,)) for s in range(P)]
        threads += [threading.Thread(target=recv, args=(r,)) for r in range(P)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise ConnectionError("; ".join(errors))
        return got

    def close(self):
        for a, b in self.links.values():
            a.close()
            b.close()


# --- distributed multiply --------------------------------------------------

class DistributedOperator:
    """y = M x with rows split by a PartitionPlan.

    Each partition holds only its rows, prepared (and, for tile-composite,
    tuned) independently. Calls are rounds; ``history`` keeps one CommStats
    per round.
    """

    def __init__(self, plan: PartitionPlan, m, cfg: SolverConfig | None = None,
                 transport="inproc"):
        m = as_csr(m)
        if plan.num_rows != m.num_rows:
            raise PartitionError(f"plan covers {plan.num_rows} rows, matrix has {m.num_rows}")
        if transport not in TRANSPORTS:
            raise ValueError(f"transport must be one of {TRANSPORTS}")
        cfg = cfg or SolverConfig()
        self.plan = plan
        self.shape = m.shape
        self.dtype = m.dtype
        self.rows = [plan.rows_of(p) for p in range(plan.num_parts)]
        self.local = [SpmvOperator(select_rows(m, r), cfg.backend, cfg.hardware,
                                   cfg.tile_width, None, 1) for r in self.rows]
        self.workers = max(1, cfg.workers)
        self.transport = transport
        self._mesh = _SocketMesh(plan.num_parts) if transport == "socket" else None
        self.history = []

    def _assemble(self, received, own, p):
        y = np.zeros(self.shape[0], dtype=self.dtype)
        for s in range(self.plan.num_parts):
            y[self.rows[s]] = own if s == p else received[s]
        return y

    def __call__(self, x):
        P = self.plan.num_parts
        rnd = len(self.history)
        if self.workers > 1 and P > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                segments = list(pool.map(lambda op: op(x), self.local))
        else:
            segments = [op(x) for op in self.local]
        if self._mesh is not None:
            received = self._mesh.exchange(segments, rnd)
        else:
            # in-process broadcast: every receiver gets a read-only copy
            received = []
            for r in range(P):
                inbox = {}
                for s in range(P):
                    if s != r:
                        seg = segments[s].copy()
                        seg.flags.writeable = False
                        inbox[s] = seg
                received.append(inbox)
        ys = [self._assemble(received[p], segments[p], p) for p in range(P)]
        for p in range(1, P):
            if not np.array_equal(ys[p], ys[0]):
                raise RuntimeError(f"partition {p} assembled a different y")
        self.history.append(CommStats([r.size * (P - 1) for r in self.rows], rnd))
        return ys[0]

    def close(self):
        if self._mesh is not None:
            self._mesh.close()
            self._mesh = None


def distributed_spmv(plan: PartitionPlan, m, x, cfg: SolverConfig | None = None,
                     transport="inproc"):
    """One distributed multiply; returns (y, CommStats)."""
    op = DistributedOperator(plan, m, cfg, transport)
    try:
        y = op(x)
    finally:
        op.close()
    return y, op.history[-1]


def distributed_pagerank(plan, adj, cfg: SolverConfig | None = None, transport="inproc"):
    """PageRank with every operator product done by the partitions.

    ``plan`` is a PartitionPlan over the rows of ``pagerank_operator_matrix(adj)``,
    or a partition count.
    Returns (RankVector, [CommStats per iteration]).
    """
    cfg = cfg or SolverConfig()
    wt = pagerank_operator_matrix(adj)
    if not isinstance(plan, PartitionPlan):
        plan = bitonic_partition(wt, int(plan))
    op = DistributedOperator(plan, wt, cfg, transport)
    try:
        rank = pagerank(adj, cfg, operator=op)
    finally:
        op.close()
    return rank, op.history


def column_partition_spmv(m, x, num_parts):
    """Reference column-split multiply: each part owns a contiguous block of
    columns, forms a full-length partial y and sends it to every other part.

    Returns (y, elements broadcast per round) = (y, P * N * (P - 1)).
    """
    m = as_csr(m)
    x = np.asarray(x, dtype=m.dtype)
    bounds = np.linspace(0, m.num_cols, num_parts + 1).astype(np.int64)
    rows = m.row_indices()
    partials = []
    for p in range(num_parts):
        sel = (m.col_idx >= bounds[p]) & (m.col_idx < bounds[p + 1])
        part = np.zeros(m.num_rows, dtype=m.dtype)
        np.add.at(part, rows[sel], m.values[sel] * x[m.col_idx[sel]])
        partials.append(part)
    y = np.zeros(m.num_rows, dtype=m.dtype)
    for part in partials:
        y += part
    return y, num_parts * m.num_rows * (num_parts - 1)
