"""Benchmark runners and CSV reporting.

Every benchmark that executes a rewritten plan verifies result equality
against the naive plan before reporting a time; timing never includes
dataset generation, loading, or index construction.
"""

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .datagen import GenSpec, dimension_table, generate
from .patch_index import NSC_ASC, NUC, build_index
from .query_engine import (distinct_node, execute, hash_join_node,
                           result_checksum, rewrite_distinct, rewrite_join,
                           rewrite_sort, scan_node, sort_node,
                           zero_branch_prune)
from .sharded_bitmap import ShardedBitmap, default_threads
from .update_pipeline import apply_delete, apply_insert, apply_modify

CSV_HEADER = "experiment,param,variant,runtime_ns,rows,patches,memory_bytes,blocks_scanned"

SHARD_SWEEP_SIZES = tuple(1 << p for p in range(8, 20))
UPDATE_GRANULARITIES = (5, 10, 50, 100, 500, 1000)


class VerificationError(Exception):
    """A rewritten plan produced a result differing from the naive plan."""


@dataclass
class WorkloadReport:
    experiment: str
    param: object
    variant: str
    runtime_ns: int
    rows: int = 0
    patches: int = 0
    memory_bytes: int = 0
    blocks_scanned: int = 0

    def csv_row(self):
        return (f"{self.experiment},{self.param},{self.variant},"
                f"{self.runtime_ns},{self.rows},{self.patches},"
                f"{self.memory_bytes},{self.blocks_scanned}")


def write_csv(reports, path):
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for r in reports:
            f.write(r.csv_row() + "\n")


def shard_overhead_pct(shard_size_bits):
    """Metadata overhead of sharding: one 64-bit start value per shard."""
    return round(64 / shard_size_bits * 100, 2)


class PlainBitVector:
    """Ordinary bitmap where a delete shifts the whole tail of memory.

    Uses the identical lane-shift code as the sharded structure's single
    delete, just over the full tail, so latency comparisons isolate the
    effect of sharding rather than of the shift implementation.
    """

    def __init__(self, nbits):
        self.logical_len = nbits
        self.words = np.zeros((nbits + 63) >> 6, dtype=np.uint64)

    def set(self, pos):
        self.words[pos >> 6] |= np.uint64(1) << np.uint64(pos & 63)

    def get(self, pos):
        return int(self.words[pos >> 6] >> np.uint64(pos & 63)) & 1

    def delete(self, pos):
        nwords = (self.logical_len + 63) >> 6
        seg = self.words[pos >> 6:nwords]
        carry = np.empty_like(seg)
        carry[:-1] = seg[1:] << np.uint64(63)
        carry[-1] = 0
        b0 = pos & 63
        low = np.uint64((1 << b0) - 1)
        head = (seg[0] & low) | ((seg[0] >> np.uint64(1)) & ~low) | carry[0]
        seg[:] = (seg >> np.uint64(1)) | carry
        seg[0] = head
        self.logical_len -= 1


# -- sharded bitmap benchmarks ---------------------------------------------------

def bench_shard_sweep(bits=10**7, deletes=10**5, shard_sizes=SHARD_SWEEP_SIZES,
                      seed=0, threads=None):
    """Bulk-delete runtime over a range of shard sizes, two variants."""
    _kernels.warm_up()
    rng = np.random.default_rng(seed)
    positions = np.sort(rng.choice(bits, size=deletes, replace=False))[::-1]
    nthreads = threads if threads is not None else default_threads()
    reports = []
    for size in shard_sizes:
        for variant, impl, nt in (("scalar", "scalar", 1),
                                  ("parallel_lanes", "lanes", nthreads)):
            bm = ShardedBitmap(bits, size, shift_impl=impl)
            t0 = time.perf_counter_ns()
            bm.bulk_delete(positions, threads=nt)
            dt = time.perf_counter_ns() - t0
            reports.append(WorkloadReport(
                "shard_sweep", size, variant, dt, rows=bits, patches=deletes,
                memory_bytes=bm.memory_bytes()))
    return reports


def bench_delete_latency(bits=10**7, singles=1000, bulk_deletes=10**5,
                         shard_size=1 << 14, seed=0, runs=5, threads=None):
    """Median per-element delete latency: naive vs sharded vs bulk."""
    _kernels.warm_up()
    rng = np.random.default_rng(seed)
    naive_ns, single_ns, bulk_ns = [], [], []
    for _ in range(runs):
        pos = np.sort(rng.choice(bits - singles, size=singles,
                                 replace=False))[::-1]
        naive = PlainBitVector(bits)
        t0 = time.perf_counter_ns()
        for p in pos:
            naive.delete(int(p))
        naive_ns.append((time.perf_counter_ns() - t0) / singles)

        sharded = ShardedBitmap(bits, shard_size)
        t0 = time.perf_counter_ns()
        for p in pos:
            sharded.delete(int(p))
        single_ns.append((time.perf_counter_ns() - t0) / singles)

        bulk_pos = np.sort(rng.choice(bits, size=bulk_deletes,
                                      replace=False))[::-1]
        bulk = ShardedBitmap(bits, shard_size)
        t0 = time.perf_counter_ns()
        bulk.bulk_delete(bulk_pos, threads=threads)
        bulk_ns.append((time.perf_counter_ns() - t0) / bulk_deletes)

    med = statistics.median
    result = {"naive_ns": med(naive_ns), "single_ns": med(single_ns),
              "bulk_ns": med(bulk_ns)}
    reports = [
        WorkloadReport("delete_latency", bits, "naive_full_shift",
                       int(result["naive_ns"]), rows=bits),
        WorkloadReport("delete_latency", bits, "sharded_single",
                       int(result["single_ns"]), rows=bits),
        WorkloadReport("delete_latency", bits, "sharded_bulk",
                       int(result["bulk_ns"]), rows=bits),
    ]
    return result, reports


# -- query benchmarks --------------------------------------------------------------

def build_query_plans(query, table, index, dim=None):
    """(naive, rewritten) plan pair for one of the three query shapes."""
    if query == "distinct":
        naive = distinct_node(scan_node(table, [index.column]), index.column)
        rewritten = rewrite_distinct(naive, index)
    elif query == "sort":
        naive = sort_node(scan_node(table, [index.column]), index.column,
                          index.constraint.order)
        rewritten = rewrite_sort(naive, index)
    elif query == "join":
        naive = hash_join_node(scan_node(table, [index.column]),
                               scan_node(dim, ["value", "payload"]),
                               index.column, "value")
        rewritten = rewrite_join(naive, index)
    else:
        raise ValueError(f"unknown query {query!r}")
    return naive, rewritten


def _results_match(query, key, rel, baseline):
    """distinct: set equality; join: multiset; sort: ordered key sequence
    plus row multiset (tie order is not part of the contract)."""
    if query == "sort" and not np.array_equal(rel.columns[key],
                                              baseline.columns[key]):
        return False
    return result_checksum(rel) == result_checksum(baseline)


def bench_query(table, query, index, dim=None, plans=("naive", "patchindex"),
                param="", verify=True):
    """Time the requested plan variants; always verify against naive."""
    naive, rewritten = build_query_plans(query, table, index, dim)
    baseline = execute(naive)

    selected = {"naive": naive}
    if "patchindex" in plans:
        if rewritten is None:
            raise VerificationError(f"{query}: rewrite declined")
        selected["patchindex"] = rewritten
    if "patchindex-zbp" in plans:
        if rewritten is None:
            raise VerificationError(f"{query}: rewrite declined")
        selected["patchindex-zbp"] = zero_branch_prune(rewritten)

    reports = []
    for name in plans:
        plan = selected[name]
        t0 = time.perf_counter_ns()
        rel = execute(plan)
        dt = time.perf_counter_ns() - t0
        if verify and not _results_match(query, index.column, rel, baseline):
            raise VerificationError(
                f"{query}/{name}: result mismatch against naive plan")
        reports.append(WorkloadReport(
            f"query_{query}", param, name, dt, rows=rel.nrows,
            patches=index.patch_count, memory_bytes=index.memory_bytes()))
    return reports


def bench_query_suite(rows=10**6, rates=(0.0, 0.01, 0.2, 0.5, 0.99), seed=0,
                      queries=("distinct", "sort", "join"), dim_rows=10**4,
                      partitions=4):
    """Each query shape timed over a range of exception rates."""
    reports = []
    for query in queries:
        kind = "nuc" if query == "distinct" else "nsc"
        for e in rates:
            spec = GenSpec(kind, rows, e, seed=seed, partitions=partitions,
                           value_domain=dim_rows if query == "join" else None)
            table = generate(spec)
            constraint = NUC if kind == "nuc" else NSC_ASC
            index = build_index([p.columns["value"] for p in table.partitions],
                                constraint)
            dim = dimension_table(dim_rows) if query == "join" else None
            plans = ["naive", "patchindex"]
            if index.patch_count == 0:
                plans.append("patchindex-zbp")
            reports.extend(bench_query(table, query, index, dim=dim,
                                       plans=tuple(plans), param=e))
    return reports


# -- update benchmarks ----------------------------------------------------------------

def _prepared_updates(op, row_count, count, seed, key_start):
    """Deterministic update workload, splittable at any granularity."""
    rng = np.random.default_rng(seed)
    if op == "insert":
        return {"values": rng.integers(0, row_count, size=count),
                "keys": key_start + np.arange(count)}
    if op == "modify":
        return {"ids": rng.choice(row_count, size=count, replace=False),
                "values": rng.integers(0, row_count, size=count)}
    if op == "delete":
        # ids below row_count - count stay valid whatever the batch split
        ids = rng.choice(row_count - count, size=count, replace=False)
        return {"ids": np.sort(ids)[::-1]}
    raise ValueError(f"unknown update op {op!r}")


def run_update_workload(table, indexes, op, prepared, granularity):
    """Apply `count` row updates in statements of `granularity` rows."""
    count = len(prepared["values" if op != "delete" else "ids"])
    t0 = time.perf_counter_ns()
    blocks = 0
    for lo in range(0, count, granularity):
        hi = min(lo + granularity, count)
        if op == "insert":
            _, stats = apply_insert(table, indexes, {
                "key": prepared["keys"][lo:hi],
                "value": prepared["values"][lo:hi]})
        elif op == "modify":
            stats = apply_modify(table, indexes, prepared["ids"][lo:hi],
                                 {"value": prepared["values"][lo:hi]})
        else:
            stats = apply_delete(table, indexes, prepared["ids"][lo:hi])
        blocks += sum(s.blocks_scanned for s in stats)
    return time.perf_counter_ns() - t0, blocks


def state_checksum(table, index=None):
    import hashlib
    h = hashlib.blake2b(digest_size=16)
    _, cols = table.scan(["value"])
    h.update(cols["value"].tobytes())
    if index is not None:
        h.update(np.ascontiguousarray(index.global_patch_rows()).tobytes())
    return h.hexdigest()


def bench_update(spec, op, count=1000, granularities=UPDATE_GRANULARITIES,
                 variants=("none", "bitmap", "identifiers"), constraint=None,
                 seed=1):
    """Total update runtime per granularity for each index variant.

    Returns (reports, checksums); checksums map (variant, granularity) to
    the final table+index state for granularity-invariance checks.
    """
    _kernels.warm_up()
    constraint = constraint or (NUC if spec.kind == "nuc" else NSC_ASC)
    reports, checksums = [], {}
    for variant in variants:
        for g in granularities:
            table = generate(spec)
            prepared = _prepared_updates(op, table.row_count, count, seed,
                                         key_start=table.row_count)
            if variant == "none":
                indexes = []
                index = None
            else:
                index = build_index(
                    [p.columns["value"] for p in table.partitions],
                    constraint, store=variant)
                indexes = [index]
            dt, blocks = run_update_workload(table, indexes, op, prepared, g)
            checksums[(variant, g)] = state_checksum(table, index)
            reports.append(WorkloadReport(
                f"update_{op}", g, variant, dt, rows=table.row_count,
                patches=index.patch_count if index else 0,
                memory_bytes=index.memory_bytes() if index else 0,
                blocks_scanned=blocks))
    return reports, checksums
