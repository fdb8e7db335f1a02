"""Operator trees, execution, and patch-aware plan rewriting.

Plans are built programmatically. A Scan node can split a table's rows by
patch membership (exclude_patches / use_patches, decided purely by rowID);
the rewrites clone the query subtree over both flows so the constraint can
be exploited on the patch-free flow: distinct drops its aggregation, sort
degrades to a merge of already-sorted partition streams, and a hash join
becomes a merge join. A cardinality-based cost model picks between the
naive and rewritten plans, and zero-branch pruning removes subtrees that
cannot produce rows.
"""

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .column_store import ScanRange
from .patch_index import ConstraintKind, SortOrder

_tag_counter = itertools.count()


@dataclass
class Relation:
    columns: dict

    @property
    def nrows(self):
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def take(self, idx):
        return Relation({c: a[idx] for c, a in self.columns.items()})


@dataclass
class PlanNode:
    op: str
    children: list = field(default_factory=list)
    table: object = None
    index: object = None
    mode: str = "all"
    partition: int = None
    scan_range: object = None
    columns: list = None
    predicate: tuple = None
    key: str = None
    order: SortOrder = SortOrder.ASCENDING
    left_key: str = None
    right_key: str = None
    build_side: str = "auto"
    tag: str = None
    relation: object = None
    est_rows: int = None


# -- node constructors -------------------------------------------------------

def scan_node(table, columns=None, mode="all", index=None, scan_range=None,
              partition=None):
    return PlanNode("scan", table=table, columns=columns, mode=mode,
                    index=index, scan_range=scan_range, partition=partition)


def select_node(child, predicate):
    return PlanNode("select", [child], predicate=predicate)


def project_node(child, columns):
    return PlanNode("project", [child], columns=columns)


def distinct_node(child, key):
    return PlanNode("distinct", [child], key=key)


def group_count_node(child, key):
    return PlanNode("group_count", [child], key=key)


def const_count_node(child, key):
    return PlanNode("const_count", [child], key=key)


def sort_node(child, key, order=SortOrder.ASCENDING):
    return PlanNode("sort", [child], key=key, order=order)


def hash_join_node(left, right, left_key, right_key, build_side="auto"):
    return PlanNode("hash_join", [left, right], left_key=left_key,
                    right_key=right_key, build_side=build_side)


def merge_join_node(left, right, left_key, right_key):
    return PlanNode("merge_join", [left, right], left_key=left_key,
                    right_key=right_key)


def union_node(children):
    return PlanNode("union", list(children))


def merge_sorted_node(children, key, order=SortOrder.ASCENDING):
    return PlanNode("merge_sorted", list(children), key=key, order=order)


def reuse_cache_node(tag, child):
    return PlanNode("reuse_cache", [child], tag=tag)


def reuse_load_node(tag):
    return PlanNode("reuse_load", tag=tag)


def materialized_node(relation):
    """Leaf wrapping an already-computed result (e.g. a scanned delta)."""
    return PlanNode("materialized", relation=relation)


def fresh_tag(prefix="reuse"):
    return f"{prefix}:{next(_tag_counter)}"


# -- execution ---------------------------------------------------------------

def _sort_key(values, order):
    # bitwise not reverses int64 order without overflow at the extremes
    return values if order is SortOrder.ASCENDING else np.invert(values)


class Executor:
    """Evaluates a plan tree; ReuseCache results are shared per execution."""

    def __init__(self):
        self._cache = {}
        self._cache_nodes = {}
        self.eval_counts = {}

    def run(self, plan):
        self._register(plan)
        return self._exec(plan)

    def _register(self, node):
        if node.op == "reuse_cache":
            self._cache_nodes[node.tag] = node
        for c in node.children:
            self._register(c)

    def _exec(self, node):
        return getattr(self, "_op_" + node.op)(node)

    # scans

    def _op_scan(self, node):
        table = node.table
        rng = node.scan_range
        part_lo = 0
        if node.partition is not None:
            offsets = table.partition_offsets()
            part_lo, hi = int(offsets[node.partition]), int(offsets[node.partition + 1])
            base = rng.clip(part_lo, hi) if rng is not None else [(part_lo, hi)]
            rng = ScanRange.normalized(base)
        ids, cols = table.scan(node.columns, scan_range=rng)
        if node.mode != "all":
            index = node.index
            if index is None:
                raise ValueError("patch scan modes require an index")
            if index.row_count != table.row_count:
                raise ValueError(
                    f"index covers {index.row_count} rows, table has {table.row_count}")
            if node.partition is not None:
                flags = index.mask_for_partition(node.partition)[ids - part_lo]
            else:
                flags = index.global_patch_mask()[ids]
            keep = ~flags if node.mode == "exclude_patches" else flags
            ids = ids[keep]
            cols = {c: a[keep] for c, a in cols.items()}
        out = {"rowid": ids}
        out.update(cols)
        return Relation(out)

    # row-wise operators

    def _op_materialized(self, node):
        return node.relation

    def _op_select(self, node):
        rel = self._exec(node.children[0])
        kind = node.predicate[0]
        if kind == "interval":
            _, col, lo, hi = node.predicate
            mask = (rel.columns[col] >= lo) & (rel.columns[col] <= hi)
        elif kind == "in":
            _, col, values = node.predicate
            mask = np.isin(rel.columns[col], values)
        elif kind == "==":
            _, col, v = node.predicate
            mask = rel.columns[col] == v
        else:
            raise ValueError(f"unknown predicate {node.predicate!r}")
        return rel.take(mask)

    def _op_project(self, node):
        rel = self._exec(node.children[0])
        return Relation({c: rel.columns[c] for c in node.columns})

    def _op_distinct(self, node):
        rel = self._exec(node.children[0])
        return Relation({node.key: np.unique(rel.columns[node.key])})

    def _op_group_count(self, node):
        rel = self._exec(node.children[0])
        keys, counts = np.unique(rel.columns[node.key], return_counts=True)
        return Relation({node.key: keys, "count": counts.astype(np.int64)})

    def _op_const_count(self, node):
        rel = self._exec(node.children[0])
        vals = rel.columns[node.key]
        return Relation({node.key: vals,
                         "count": np.ones(len(vals), dtype=np.int64)})

    def _op_sort(self, node):
        rel = self._exec(node.children[0])
        order = np.argsort(_sort_key(rel.columns[node.key], node.order),
                           kind="stable")
        return rel.take(order)

    # joins

    @staticmethod
    def _combine(left, right, left_idx, right_idx):
        out = {c: a[left_idx] for c, a in left.columns.items()}
        for c, a in right.columns.items():
            name = c if c not in out else c + "_r"
            out[name] = a[right_idx]
        return Relation(out)

    def _op_hash_join(self, node):
        left = self._exec(node.children[0])
        right = self._exec(node.children[1])
        side = node.build_side
        if side == "auto":
            side = "left" if left.nrows <= right.nrows else "right"
        if side == "left":
            build, probe = left, right
            bkey, pkey = node.left_key, node.right_key
        else:
            build, probe = right, left
            bkey, pkey = node.right_key, node.left_key
        order = np.argsort(build.columns[bkey], kind="stable")
        bk = build.columns[bkey][order]
        pk = probe.columns[pkey]
        lo = np.searchsorted(bk, pk, side="left")
        hi = np.searchsorted(bk, pk, side="right")
        counts = hi - lo
        total = int(counts.sum())
        probe_idx = np.repeat(np.arange(len(pk)), counts)
        cum = np.concatenate(([0], np.cumsum(counts)[:-1]))
        within = np.arange(total) - np.repeat(cum, counts)
        build_idx = order[np.repeat(lo, counts) + within]
        if side == "left":
            return self._combine(left, right, build_idx, probe_idx)
        return self._combine(left, right, probe_idx, build_idx)

    def _op_merge_join(self, node):
        left = self._exec(node.children[0])
        right = self._exec(node.children[1])
        lk = left.columns[node.left_key]
        rk = right.columns[node.right_key]
        if len(rk) > 1 and not np.all(np.diff(rk) > 0):
            raise ValueError("merge join needs a sorted unique right side")
        if len(lk) > 1 and not np.all(np.diff(lk) >= 0):
            raise ValueError("merge join needs a sorted left side")
        if len(rk) == 0 or len(lk) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return self._combine(left, right, empty, empty)
        pos = np.minimum(np.searchsorted(rk, lk), len(rk) - 1)
        match = rk[pos] == lk
        return self._combine(left, right, np.flatnonzero(match), pos[match])

    # stream combination

    def _op_union(self, node):
        rels = [self._exec(c) for c in node.children]
        names = list(rels[0].columns)
        return Relation({c: np.concatenate([r.columns[c] for r in rels])
                         for c in names})

    def _op_merge_sorted(self, node):
        rels = [self._exec(c) for c in node.children]
        if len(rels) == 1:
            return rels[0]
        names = list(rels[0].columns)
        cols = {c: np.concatenate([r.columns[c] for r in rels]) for c in names}
        # stable sort of concatenated sorted runs degrades to a linear merge
        # (galloping); ties keep earlier-stream rows first
        order = np.argsort(_sort_key(cols[node.key], node.order), kind="stable")
        return Relation({c: a[order] for c, a in cols.items()})

    # intermediate result reuse

    def _op_reuse_cache(self, node):
        if node.tag not in self._cache:
            self._cache[node.tag] = self._exec(node.children[0])
            self.eval_counts[node.tag] = self.eval_counts.get(node.tag, 0) + 1
        return self._cache[node.tag]

    def _op_reuse_load(self, node):
        if node.tag in self._cache:
            return self._cache[node.tag]
        cache_node = self._cache_nodes.get(node.tag)
        if cache_node is None:
            raise ValueError(f"ReuseLoad tag {node.tag!r} has no cache in plan")
        return self._op_reuse_cache(cache_node)


def execute(plan):
    return Executor().run(plan)


# -- cardinality and cost -------------------------------------------------------

def annotate(plan):
    """Fill est_rows bottom-up; patch counts are known exactly."""
    for c in plan.children:
        annotate(c)
    op = plan.op
    if op == "scan":
        if plan.partition is None:
            total = plan.table.row_count
            patches = plan.index.patch_count if plan.index else 0
        else:
            total = plan.table.partitions[plan.partition].total_rows
            patches = (plan.index.partitions[plan.partition].patch_count
                       if plan.index else 0)
        if plan.mode == "all":
            plan.est_rows = total
        elif plan.mode == "exclude_patches":
            plan.est_rows = total - patches
        else:
            plan.est_rows = patches
    elif op in ("union", "merge_sorted"):
        plan.est_rows = sum(c.est_rows for c in plan.children)
    elif op in ("hash_join", "merge_join"):
        # many-to-one fact/dimension joins: bounded by the fact side
        plan.est_rows = plan.children[0].est_rows
    elif op == "reuse_load":
        plan.est_rows = 0  # replays a cached result; cost carried by the cache node
    elif op == "materialized":
        plan.est_rows = plan.relation.nrows
    else:
        plan.est_rows = plan.children[0].est_rows
    return plan


_W_SCAN = 1.0
_W_SELECT = 1.0
_W_MERGE_JOIN = 2.0
_W_HASH = 4.0
_W_COMBINE = 1.0


def node_cost(plan):
    op = plan.op
    if op == "scan":
        if plan.partition is None:
            return _W_SCAN * plan.table.row_count
        return _W_SCAN * plan.table.partitions[plan.partition].total_rows
    if op in ("select", "const_count", "reuse_cache"):
        return _W_SELECT * plan.children[0].est_rows
    if op in ("project", "reuse_load", "materialized"):
        return 0.0
    if op in ("distinct", "group_count"):
        return _W_HASH * plan.children[0].est_rows
    if op == "sort":
        n = plan.children[0].est_rows
        return n * math.log2(max(n, 2))
    if op == "hash_join":
        left, right = (c.est_rows for c in plan.children)
        if plan.build_side == "auto":
            build, probe = min(left, right), max(left, right)
        elif plan.build_side == "left":
            build, probe = left, right
        else:
            build, probe = right, left
        return _W_HASH * build + probe
    if op == "merge_join":
        return _W_MERGE_JOIN * sum(c.est_rows for c in plan.children)
    if op in ("union", "merge_sorted"):
        return _W_COMBINE * sum(c.est_rows for c in plan.children)
    raise ValueError(f"unknown operator {op!r}")


def plan_cost(plan):
    return node_cost(plan) + sum(plan_cost(c) for c in plan.children)


def choose_plan(naive, rewritten, index=None):
    """Pick the cheaper plan; a declined rewrite always falls back."""
    if rewritten is None:
        return naive
    annotate(naive)
    annotate(rewritten)
    return rewritten if plan_cost(rewritten) < plan_cost(naive) else naive


# -- rewrites --------------------------------------------------------------------

_CHAIN_OPS = {"select", "project"}


def _match_chain_to_scan(plan):
    """Peel join/aggregation-free operators down to a mode-"all" scan."""
    chain = []
    node = plan
    while node.op in _CHAIN_OPS:
        chain.append(node)
        node = node.children[0]
    if node.op != "scan" or node.mode != "all":
        return None, None
    return chain, node


def _rebuild_chain(chain, leaf):
    for node in reversed(chain):
        leaf = PlanNode(node.op, [leaf], predicate=node.predicate,
                        columns=node.columns)
    return leaf


def _mode_scan(scan, index, mode, partition=None):
    return PlanNode("scan", table=scan.table, columns=scan.columns, mode=mode,
                    index=index, scan_range=scan.scan_range, partition=partition)


def rewrite_distinct(plan, index):
    """Distinct over a NUC column: the patch-free flow is already unique."""
    if plan.op != "distinct" or index.constraint.kind is not ConstraintKind.NEARLY_UNIQUE:
        return None
    if plan.key != index.column:
        return None
    chain, scan = _match_chain_to_scan(plan.children[0])
    if scan is None or index.row_count != scan.table.row_count:
        return None
    exclude = project_node(
        _rebuild_chain(chain, _mode_scan(scan, index, "exclude_patches")),
        [plan.key])
    use = distinct_node(
        _rebuild_chain(chain, _mode_scan(scan, index, "use_patches")),
        plan.key)
    return union_node([exclude, use])


def rewrite_group_count(plan, index):
    """Group-by count over a NUC column: patch-free groups have count one."""
    if plan.op != "group_count" or index.constraint.kind is not ConstraintKind.NEARLY_UNIQUE:
        return None
    if plan.key != index.column:
        return None
    chain, scan = _match_chain_to_scan(plan.children[0])
    if scan is None or index.row_count != scan.table.row_count:
        return None
    exclude = const_count_node(
        _rebuild_chain(chain, _mode_scan(scan, index, "exclude_patches")),
        plan.key)
    use = group_count_node(
        _rebuild_chain(chain, _mode_scan(scan, index, "use_patches")),
        plan.key)
    return union_node([exclude, use])


def _partition_streams(chain, scan, index, mode):
    nparts = len(scan.table.partitions)
    return [_rebuild_chain(chain, _mode_scan(scan, index, mode, partition=p))
            for p in range(nparts)]


def rewrite_sort(plan, index):
    """Sort on an NSC column: patch-free partition streams are pre-sorted."""
    if plan.op != "sort" or index.constraint.kind is not ConstraintKind.NEARLY_SORTED:
        return None
    if plan.key != index.column or plan.order is not index.constraint.order:
        return None
    chain, scan = _match_chain_to_scan(plan.children[0])
    if scan is None or index.row_count != scan.table.row_count:
        return None
    streams = _partition_streams(chain, scan, index, "exclude_patches")
    patch_sorted = sort_node(
        _rebuild_chain(chain, _mode_scan(scan, index, "use_patches")),
        plan.key, plan.order)
    return merge_sorted_node(streams + [patch_sorted], plan.key, plan.order)


def _column_sorted_unique(table, column):
    _, cols = table.scan([column])
    v = cols[column]
    return len(v) < 2 or bool(np.all(np.diff(v) > 0))


def rewrite_join(plan, index):
    """Fact/dimension hash join where the fact key is an NSC column.

    The patch-free fact flow joins with a MergeJoin against the dimension
    subtree, which is materialized once and reused by the patch flow's
    HashJoin. Requires the dimension side sorted unique on the join key.
    """
    if plan.op != "hash_join" or index.constraint.kind is not ConstraintKind.NEARLY_SORTED:
        return None
    if index.constraint.order is not SortOrder.ASCENDING:
        return None
    fact_sub, dim_sub = plan.children
    fact_key, dim_key = plan.left_key, plan.right_key
    if fact_key != index.column:
        return None
    chain, scan = _match_chain_to_scan(fact_sub)
    if scan is None or index.row_count != scan.table.row_count:
        return None
    dim_chain, dim_scan = _match_chain_to_scan(dim_sub)
    if dim_scan is None or not _column_sorted_unique(dim_scan.table, dim_key):
        return None

    tag = fresh_tag("dim")
    fact_sorted = merge_sorted_node(
        _partition_streams(chain, scan, index, "exclude_patches"),
        fact_key)
    merge_branch = merge_join_node(fact_sorted, reuse_load_node(tag),
                                   fact_key, dim_key)
    use_scan = _rebuild_chain(chain, _mode_scan(scan, index, "use_patches"))
    build = "left" if index.patch_count <= dim_sub_rows(dim_sub) else "right"
    hash_branch = hash_join_node(use_scan, reuse_cache_node(tag, dim_sub),
                                 fact_key, dim_key, build_side=build)
    return union_node([merge_branch, hash_branch])


def dim_sub_rows(dim_sub):
    node = dim_sub
    while node.op in _CHAIN_OPS:
        node = node.children[0]
    return node.table.row_count if node.op == "scan" else 0


# -- zero-branch pruning ------------------------------------------------------------

def zero_branch_prune(plan):
    """Drop subtrees whose cardinality annotation guarantees zero rows."""
    annotate(plan)
    caches = {}
    _collect_caches(plan, caches)
    pruned, _ = _prune(plan)
    surviving = {}
    _collect_caches(pruned, surviving)
    return _replace_orphan_loads(pruned, caches, surviving)


def _collect_caches(node, out):
    if node.op == "reuse_cache":
        out[node.tag] = node
    for c in node.children:
        _collect_caches(c, out)


def _prune(node):
    if node.op == "scan":
        return node, node.est_rows == 0
    if node.op == "reuse_load":
        return node, False
    results = [_prune(c) for c in node.children]
    node.children = [c for c, _ in results]
    zeros = [z for _, z in results]
    if node.op in ("hash_join", "merge_join"):
        return node, any(zeros)
    if node.op in ("union", "merge_sorted"):
        alive = [c for c, z in results if not z]
        if not alive:
            return node.children[0], True
        if len(alive) == 1:
            return alive[0], False
        node.children = alive
        return node, False
    return node, zeros[0] if zeros else False


def _replace_orphan_loads(node, caches, surviving):
    """Inline the cached subtree where pruning removed its ReuseCache."""
    if node.op == "reuse_load" and node.tag not in surviving:
        return caches[node.tag].children[0]
    node.children = [_replace_orphan_loads(c, caches, surviving)
                     for c in node.children]
    return node


# -- result comparison ------------------------------------------------------------

def canonical_order(rel):
    cols = [rel.columns[c] for c in sorted(rel.columns)]
    return np.lexsort(cols[::-1]) if cols else np.zeros(0, dtype=np.int64)


def result_checksum(rel, ordered=False):
    """Stable digest of a result; row order ignored unless ordered."""
    h = hashlib.blake2b(digest_size=16)
    names = sorted(rel.columns)
    h.update(("|".join(names)).encode())
    idx = np.arange(rel.nrows) if ordered else canonical_order(rel)
    for c in names:
        h.update(np.ascontiguousarray(rel.columns[c][idx]).tobytes())
    return h.hexdigest()


def explain(plan, cost=True):
    """One node per line, two-space indent, cardinality and cost annotations."""
    annotate(plan)
    lines = []

    def describe(node):
        if node.op == "scan":
            extra = f" p{node.partition}" if node.partition is not None else ""
            return f"Scan[{node.mode}{extra}]"
        label = {
            "select": lambda: f"Select{node.predicate!r}",
            "project": lambda: f"Project({', '.join(node.columns)})",
            "distinct": lambda: f"HashAggregateDistinct({node.key})",
            "group_count": lambda: f"GroupAggregate({node.key})",
            "const_count": lambda: f"ConstCount({node.key})",
            "sort": lambda: f"Sort({node.key} {node.order.value})",
            "hash_join": lambda: (f"HashJoin({node.left_key}={node.right_key}, "
                                  f"build={node.build_side})"),
            "merge_join": lambda: f"MergeJoin({node.left_key}={node.right_key})",
            "union": lambda: "Union",
            "merge_sorted": lambda: f"MergeSortedStreams({node.key})",
            "reuse_cache": lambda: f"ReuseCache({node.tag})",
            "reuse_load": lambda: f"ReuseLoad({node.tag})",
            "materialized": lambda: "Materialized",
        }
        return label[node.op]()

    def walk(node, depth):
        note = f" rows={node.est_rows}"
        if cost:
            note += f" cost={plan_cost(node):.0f}"
        lines.append("  " * depth + describe(node) + note)
        for c in node.children:
            walk(c, depth + 1)

    walk(plan, 0)
    return "\n".join(lines)
