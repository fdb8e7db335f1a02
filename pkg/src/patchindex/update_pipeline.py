"""Keeps patch indexes consistent under inserts, modifies, and deletes.

The handlers never recompute an index and never scan the full table. The
uniqueness constraint is maintained by joining the touched rows against the
table (restricted by zone-map pruning over the touched value range, the
dynamic-range-propagation trick) and patching both sides of every match;
the sortedness constraint extends its sorted run for inserts and simply
patches modified rows. Deletes drop the tracking state for the deleted
rowIDs. The maintained patch set may grow beyond the minimal one, but the
non-patch rows always satisfy the constraint.
"""

from dataclasses import dataclass

import numpy as np

from .patch_index import NULL_VALUE, ConstraintKind, SortOrder, lss_keep_mask
from .query_engine import (Executor, Relation, fresh_tag, hash_join_node,
                           materialized_node, reuse_cache_node, scan_node)


@dataclass
class UpdateStats:
    blocks_scanned: int = 0
    blocks_total: int = 0
    new_patches: int = 0

    def merge(self, other):
        return UpdateStats(self.blocks_scanned + other.blocks_scanned,
                           max(self.blocks_total, other.blocks_total),
                           self.new_patches + other.new_patches)


def _duplicate_join(table, column, probe_ids, probe_values):
    """Join touched rows against the pruned table; both match sides patch.

    Returns (patch rowIDs, stats). Matches of a row with itself are
    excluded: a touched row must not patch itself on its own value.
    """
    nulls = probe_ids[probe_values == NULL_VALUE]
    live = probe_values != NULL_VALUE
    stats = UpdateStats(blocks_total=table.total_blocks(),
                        new_patches=len(nulls))
    if not live.any():
        return nulls, stats
    ids, values = probe_ids[live], probe_values[live]

    scan_range = table.prune_blocks(
        column, ("interval", int(values.min()), int(values.max())))
    stats.blocks_scanned = table.count_blocks(scan_range)

    build = materialized_node(Relation({"rowid": ids, column: values}))
    plan = hash_join_node(
        reuse_cache_node(fresh_tag("touched"), build),
        scan_node(table, [column], scan_range=scan_range),
        column, column, build_side="left")
    matches = Executor().run(plan)
    not_self = matches.columns["rowid"] != matches.columns["rowid_r"]
    patches = np.union1d(matches.columns["rowid"][not_self],
                         matches.columns["rowid_r"][not_self])
    patches = np.union1d(patches, nulls)
    stats.new_patches = len(patches)
    return patches, stats


def handle_insert_nuc(table, index, inserted_ids):
    """Grow the index and patch every duplicate the insert introduced.

    Rows must already sit in the table's delta; the probe side covers the
    full table including that delta, so duplicates inside the batch are
    found too.
    """
    index.grow_last(len(inserted_ids))
    _, cols = table.scan_delta([index.column])
    patches, stats = _duplicate_join(table, index.column,
                                     np.asarray(inserted_ids), cols[index.column])
    index.add_patches(patches)
    return stats


def handle_insert_nsc(table, index, inserted_ids):
    """Extend the sorted run with eligible inserted values; patch the rest.

    Only values on the growing side of the run's tail can extend it; the
    longest sorted subsequence of those is kept and everything else joins
    the patches. The combined run may no longer be globally optimal.
    """
    inserted_ids = np.asarray(inserted_ids, dtype=np.int64)
    index.grow_last(len(inserted_ids))
    _, cols = table.scan_delta([index.column])
    values = cols[index.column]

    pidx = index.partitions[-1]  # inserts append to the last partition
    lsv = pidx.last_sorted_value
    ascending = index.constraint.order is SortOrder.ASCENDING

    eligible = values != NULL_VALUE
    if lsv is not None:
        eligible &= (values >= lsv) if ascending else (values <= lsv)
    keep = np.zeros(len(values), dtype=bool)
    if eligible.any():
        seq = values[eligible].tolist()
        if not ascending:
            seq = [-v for v in seq]
        keep[np.flatnonzero(eligible)[lss_keep_mask(seq)]] = True
        pidx.last_sorted_value = int(values[np.flatnonzero(keep)[-1]])

    patches = inserted_ids[~keep]
    index.add_patches(patches)
    return UpdateStats(blocks_total=table.total_blocks(),
                       new_patches=len(patches))


def handle_modify_nuc(table, index, modified_ids):
    """Re-evaluate modified rows: clear their patch bits, then re-join.

    Partner rows of the formerly duplicated values keep their patch bits
    (an accepted loss of optimality); the join re-patches everything the
    new values collide with, on both sides.
    """
    modified_ids = np.asarray(modified_ids, dtype=np.int64)
    index.remove_patches(modified_ids)
    values = table.gather(modified_ids, index.column)
    patches, stats = _duplicate_join(table, index.column, modified_ids, values)
    index.add_patches(patches)
    return stats


def handle_modify_nsc(table, index, modified_ids):
    """All modified rows become patches; fix the tail value if it moved."""
    modified_ids = np.asarray(modified_ids, dtype=np.int64)
    new_patches = 0
    for p, local in index.split_global(modified_ids):
        pidx = index.partitions[p]
        mask = pidx.patch_mask()
        non_patch = np.flatnonzero(~mask)
        tail = int(non_patch[-1]) if non_patch.size else None
        before = pidx.patch_count
        pidx.add_patches(local)
        new_patches += pidx.patch_count - before
        if tail is not None and tail in set(local.tolist()):
            _recompute_tail(table, index, p)
    return UpdateStats(blocks_total=table.total_blocks(),
                       new_patches=new_patches)


def handle_delete(table, index, descending_ids):
    """Drop tracking state for deleted rows; rowIDs renumber densely.

    Call after the table rows were removed with the same id list. Values
    that became unique stay patched (superset of optimal), so only the
    sorted-run tail may need fixing.
    """
    descending_ids = np.asarray(descending_ids, dtype=np.int64)
    if descending_ids.size == 0:
        return UpdateStats(blocks_total=table.total_blocks())
    nsc = index.constraint.kind is ConstraintKind.NEARLY_SORTED
    for p, local in index.split_global(descending_ids):
        pidx = index.partitions[p]
        tail_dropped = False
        if nsc:
            non_patch = np.flatnonzero(~pidx.patch_mask())
            tail = int(non_patch[-1]) if non_patch.size else None
            tail_dropped = tail is None or tail in set(local.tolist())
        pidx.drop_rows(local)
        if nsc and tail_dropped:
            _recompute_tail(table, index, p)
    return UpdateStats(blocks_total=table.total_blocks())


def _recompute_tail(table, index, p):
    """Backward scan for the last non-patch row of a partition."""
    pidx = index.partitions[p]
    non_patch = np.flatnonzero(~pidx.patch_mask())
    if non_patch.size == 0:
        pidx.last_sorted_value = None
        return
    values = table.partitions[p].columns[index.column]
    pidx.last_sorted_value = int(values[non_patch[-1]])


_INSERT_HANDLERS = {ConstraintKind.NEARLY_UNIQUE: handle_insert_nuc,
                    ConstraintKind.NEARLY_SORTED: handle_insert_nsc}
_MODIFY_HANDLERS = {ConstraintKind.NEARLY_UNIQUE: handle_modify_nuc,
                    ConstraintKind.NEARLY_SORTED: handle_modify_nsc}


# -- statement-level entry points: one call per update statement --------------

def apply_insert(table, indexes, rows):
    ids = table.insert_rows(rows)
    stats = [_INSERT_HANDLERS[ix.constraint.kind](table, ix, ids)
             for ix in indexes]
    table.merge_delta()
    return ids, stats


def apply_modify(table, indexes, rowids, updates):
    table.modify_rows(rowids, updates)
    return [_MODIFY_HANDLERS[ix.constraint.kind](table, ix, rowids)
            for ix in indexes if ix.column in updates]


def apply_delete(table, indexes, descending_ids):
    table.delete_rows(descending_ids)
    return [handle_delete(table, ix, descending_ids) for ix in indexes]
