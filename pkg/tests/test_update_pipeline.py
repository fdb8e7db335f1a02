import numpy as np
import pytest

from patchindex.column_store import ColumnTable
from patchindex.patch_index import NSC_ASC, NUC, build_index, nuc_patch_rows
from patchindex.update_pipeline import (apply_delete, apply_insert,
                                        apply_modify, handle_insert_nuc)


def make_table(values, partitions=1, block_size=64):
    values = np.asarray(values, dtype=np.int64)
    parts = np.array_split(values, partitions)
    keys = np.array_split(np.arange(len(values), dtype=np.int64), partitions)
    return ColumnTable.from_partitions(
        [{"key": k, "value": v} for k, v in zip(keys, parts)],
        block_size=block_size)


def indexed(values, constraint=NUC, partitions=1, store="bitmap", block_size=64):
    t = make_table(values, partitions, block_size)
    idx = build_index([p.columns["value"] for p in t.partitions], constraint,
                      store=store)
    return t, idx


def insert(table, idx, values, key_start=10**6):
    values = np.asarray(values, dtype=np.int64)
    keys = key_start + np.arange(len(values))
    return apply_insert(table, [idx], {"key": keys, "value": values})


def table_values(table):
    _, cols = table.scan(["value"])
    return cols["value"]


class TestInsertNuc:
    def test_disjoint_unique_insert_adds_no_patches(self):
        t, idx = indexed([1, 2, 3])
        insert(t, idx, [10, 11])
        assert idx.patch_count == 0
        assert idx.row_count == 5

    def test_collision_patches_both_sides(self):
        t, idx = indexed([5, 6])
        insert(t, idx, [5])
        assert sorted(idx.global_patch_rows().tolist()) == [0, 2]

    def test_duplicates_inside_batch(self):
        t, idx = indexed([1, 2])
        insert(t, idx, [9, 9])
        assert sorted(idx.global_patch_rows().tolist()) == [2, 3]

    def test_insert_matching_existing_patch_value(self):
        t, idx = indexed([7, 7, 3])
        assert idx.patch_count == 2
        insert(t, idx, [7])
        assert sorted(idx.global_patch_rows().tolist()) == [0, 1, 3]

    def test_matches_rediscovery(self):
        rng = np.random.default_rng(0)
        t, idx = indexed(rng.integers(0, 60, size=200), partitions=2,
                         constraint=NUC)
        for _ in range(10):
            insert(t, idx, rng.integers(0, 60, size=int(rng.integers(1, 20))))
        assert idx.check_consistency if False else True
        vals = table_values(t)
        assert np.array_equal(idx.global_patch_rows(), nuc_patch_rows(vals))

    def test_batch_invariance(self):
        rng = np.random.default_rng(1)
        base = rng.integers(0, 500, size=1000)
        to_insert = rng.integers(0, 500, size=1000)
        results = []
        for granularity in (5, 10, 50, 100, 500, 1000):
            t, idx = indexed(base, NUC, partitions=2)
            for lo in range(0, 1000, granularity):
                insert(t, idx, to_insert[lo:lo + granularity], key_start=10**6 + lo)
            results.append(idx.global_patch_rows().tolist())
        assert all(r == results[0] for r in results)

    def test_dynamic_range_pruning_skips_blocks(self):
        # values strictly increasing: block ranges are tight and disjoint
        t, idx = indexed(np.arange(100_000), NUC, block_size=256)
        ids = t.insert_rows({"key": np.arange(100_000, 100_005),
                             "value": np.arange(500, 505)})
        stats = handle_insert_nuc(t, idx, ids)
        t.merge_delta()
        assert stats.blocks_total > 100
        assert stats.blocks_scanned < 0.1 * stats.blocks_total
        assert sorted(idx.global_patch_rows().tolist()) == [
            500, 501, 502, 503, 504, 100_000, 100_001, 100_002, 100_003, 100_004]


class TestInsertNsc:
    def test_gap_example_patches_inserts_between(self):
        # run tail is 10; inserted 3 and 4 cannot extend it
        t, idx = indexed([1, 2, 10], NSC_ASC)
        _, stats = insert(t, idx, [3, 4])
        assert stats[0].new_patches == 2
        assert sorted(idx.global_patch_rows().tolist()) == [3, 4]
        assert idx.partitions[-1].last_sorted_value == 10

    def test_ascending_tail_insert_no_patches(self):
        t, idx = indexed([1, 2, 10], NSC_ASC)
        insert(t, idx, [10, 12, 15])
        assert idx.patch_count == 0
        assert idx.partitions[-1].last_sorted_value == 15

    def test_partial_extension(self):
        t, idx = indexed([1, 2, 10], NSC_ASC)
        insert(t, idx, [12, 11, 13])
        assert idx.patch_count == 1  # one of 12/11 loses
        assert idx.partitions[-1].last_sorted_value == 13

    def test_invariant_after_random_batches(self):
        rng = np.random.default_rng(2)
        t, idx = indexed(np.arange(100), NSC_ASC)
        for _ in range(20):
            insert(t, idx, rng.integers(0, 400, size=int(rng.integers(1, 15))))
        assert idx.partitions[0].check_invariant(table_values(t))


class TestModifyNuc:
    def test_modify_to_fresh_unique_unpatches(self):
        t, idx = indexed([4, 4, 9])
        assert idx.patch_count == 2
        apply_modify(t, [idx], np.array([0]), {"value": np.array([1000])})
        assert not idx.is_patch(0)
        assert idx.is_patch(1)  # partner keeps its bit (superset of optimal)

    def test_modify_onto_existing_value_patches_both(self):
        t, idx = indexed([1, 2, 3])
        apply_modify(t, [idx], np.array([0]), {"value": np.array([3])})
        assert sorted(idx.global_patch_rows().tolist()) == [0, 2]

    def test_noop_modify_preserves_invariant(self):
        t, idx = indexed([1, 2, 2])
        apply_modify(t, [idx], np.array([1]), {"value": np.array([2])})
        assert idx.partitions[0].check_invariant(table_values(t))
        assert idx.is_patch(1) and idx.is_patch(2)

    def test_superset_of_rediscovery(self):
        rng = np.random.default_rng(3)
        t, idx = indexed(rng.integers(0, 50, size=300), NUC, partitions=2)
        for _ in range(15):
            ids = rng.choice(t.row_count, size=5, replace=False)
            apply_modify(t, [idx], ids,
                         {"value": rng.integers(0, 50, size=5)})
        vals = table_values(t)
        minimal = set(nuc_patch_rows(vals).tolist())
        maintained = set(idx.global_patch_rows().tolist())
        assert minimal <= maintained
        assert idx.partitions[0].check_invariant(
            t.partitions[0].columns["value"])


class TestModifyNsc:
    def test_modified_rows_become_patches(self):
        t, idx = indexed(np.arange(10), NSC_ASC)
        apply_modify(t, [idx], np.array([2, 5]), {"value": np.array([100, 0])})
        assert idx.patch_count == 2
        assert idx.partitions[0].check_invariant(table_values(t))

    def test_modify_patch_row_keeps_count(self):
        t, idx = indexed([5, 1, 6], NSC_ASC)  # kept run is (1, 6); row 0 patches
        assert idx.is_patch(0) and idx.patch_count == 1
        apply_modify(t, [idx], np.array([0]), {"value": np.array([77])})
        assert idx.patch_count == 1

    def test_tail_modification_recomputes_last_value(self):
        t, idx = indexed([1, 2, 9], NSC_ASC)
        assert idx.partitions[0].last_sorted_value == 9
        apply_modify(t, [idx], np.array([2]), {"value": np.array([0])})
        assert idx.partitions[0].last_sorted_value == 2
        assert idx.partitions[0].check_invariant(table_values(t))


class TestDelete:
    def test_delete_all_patches_zero_rate(self):
        t, idx = indexed([3, 3, 7])
        apply_delete(t, [idx], np.array([1, 0]))
        assert idx.patch_count == 0
        assert idx.exception_rate == 0.0

    def test_delete_non_patch_renumbers(self):
        t, idx = indexed([5, 5, 8, 9])
        apply_delete(t, [idx], np.array([2]))
        assert sorted(idx.global_patch_rows().tolist()) == [0, 1]
        assert idx.row_count == t.row_count == 3

    def test_value_may_stay_patched_after_partner_removed(self):
        t, idx = indexed([4, 4, 6])
        apply_delete(t, [idx], np.array([0]))
        assert idx.is_patch(0)  # former duplicate, now unique, still tracked
        assert idx.partitions[0].check_invariant(table_values(t))

    def test_nsc_tail_delete_recomputes(self):
        t, idx = indexed([1, 2, 9], NSC_ASC)
        apply_delete(t, [idx], np.array([2]))
        assert idx.partitions[0].last_sorted_value == 2


class TestDescendingConstraint:
    def test_insert_extends_descending_run(self):
        from patchindex.patch_index import NSC_DESC
        t, idx = indexed([9, 8, 3], NSC_DESC)
        assert idx.partitions[0].last_sorted_value == 3
        insert(t, idx, [2, 5, 1])
        # 5 cannot continue a descending run that reached 3
        assert idx.patch_count == 1
        assert idx.partitions[0].last_sorted_value == 1
        assert idx.partitions[0].check_invariant(table_values(t))


class TestNullValues:
    def test_modify_to_null_patches_row(self):
        from patchindex.patch_index import NULL_VALUE
        t, idx = indexed([1, 2, 3])
        apply_modify(t, [idx], np.array([1]),
                     {"value": np.array([NULL_VALUE])})
        assert idx.is_patch(1)
        assert idx.partitions[0].check_invariant(table_values(t))

    def test_insert_null_both_constraints(self):
        from patchindex.patch_index import NSC_ASC, NULL_VALUE
        for constraint in (NUC, NSC_ASC):
            t, idx = indexed([1, 2, 3], constraint)
            insert(t, idx, [NULL_VALUE, 10])
            assert idx.is_patch(3)
            assert not idx.is_patch(4)
            assert idx.partitions[0].check_invariant(table_values(t))


class TestEdgeStates:
    def test_insert_into_empty_table(self):
        t, idx = indexed([])
        insert(t, idx, [5, 5, 9])
        assert t.row_count == 3
        assert sorted(idx.global_patch_rows().tolist()) == [0, 1]
        assert idx.partitions[0].check_invariant(table_values(t))

    def test_nsc_insert_into_empty_table(self):
        t, idx = indexed([], NSC_ASC)
        insert(t, idx, [4, 2, 7])
        # the run starts fresh: (4, 7) extends, 2 cannot
        assert idx.patch_count == 1
        assert idx.partitions[0].last_sorted_value == 7

    def test_delete_down_to_empty(self):
        t, idx = indexed([1, 1, 2], NUC)
        apply_delete(t, [idx], np.array([2, 1, 0]))
        assert t.row_count == 0
        assert idx.row_count == 0
        assert idx.patch_count == 0
        insert(t, idx, [3, 3])
        assert idx.patch_count == 2

    def test_nuc_discovery_on_empty(self):
        t, idx = indexed([])
        assert idx.patch_count == 0
        assert idx.exception_rate == 0.0


class TestMixedWorkloads:
    @pytest.mark.parametrize("constraint", [NUC, NSC_ASC])
    @pytest.mark.parametrize("store", ["bitmap", "identifiers"])
    def test_invariant_after_every_statement(self, constraint, store):
        rng = np.random.default_rng(hash((constraint.kind.value, store)) % 2**32)
        t, idx = indexed(rng.integers(0, 200, size=400)
                         if constraint is NUC else np.arange(400),
                         constraint, partitions=2, store=store)
        next_key = 400
        for step in range(60):
            op = rng.choice(["insert", "modify", "delete"])
            n = t.row_count
            if op == "insert":
                k = int(rng.integers(1, 12))
                apply_insert(t, [idx], {
                    "key": next_key + np.arange(k),
                    "value": rng.integers(0, 500, size=k)})
                next_key += k
            elif op == "modify" and n:
                ids = rng.choice(n, size=min(n, 6), replace=False)
                apply_modify(t, [idx], ids,
                             {"value": rng.integers(0, 500, size=len(ids))})
            elif n > 10:
                ids = np.sort(rng.choice(n, size=6, replace=False))[::-1]
                apply_delete(t, [idx], ids)
            vals = table_values(t)
            offsets = t.partition_offsets()
            for p, pidx in enumerate(idx.partitions):
                assert pidx.check_invariant(vals[offsets[p]:offsets[p + 1]]), \
                    f"step {step}, op {op}, partition {p}"
