import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from patchindex.patch_index import (
    NSC_ASC, NUC, NULL_VALUE, BitmapPatchStore, ConstraintKind,
    Constraint, IdentifierPatchStore, PatchIndex, SortOrder, build_index,
    discover_nsc, discover_nuc, lss_keep_mask, nuc_patch_rows, nsc_patch_rows,
)

from oracle import lss_length_dp


class TestConstraint:
    def test_order_required_for_sorted(self):
        with pytest.raises(ValueError):
            Constraint(ConstraintKind.NEARLY_SORTED)

    def test_no_order_for_unique(self):
        with pytest.raises(ValueError):
            Constraint(ConstraintKind.NEARLY_UNIQUE, SortOrder.ASCENDING)


class TestDiscoverNuc:
    def test_already_unique(self):
        idx = discover_nuc([7, 8, 9])
        assert idx.patch_count == 0
        assert idx.exception_rate == 0.0

    def test_all_occurrences_are_patches(self):
        idx = discover_nuc([5, 5, 6])
        assert sorted(np.flatnonzero(idx.patch_mask())) == [0, 1]

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            vals = rng.integers(0, 40, size=rng.integers(1, 200))
            got = set(nuc_patch_rows(vals).tolist())
            want = {i for i, v in enumerate(vals)
                    if int((vals == v).sum()) > 1}
            assert got == want

    def test_null_always_patch(self):
        idx = discover_nuc([1, NULL_VALUE, 2])
        assert idx.is_patch(1)
        assert not idx.is_patch(0)

    def test_invariant_holds(self):
        rng = np.random.default_rng(1)
        vals = rng.integers(0, 100, size=500)
        idx = discover_nuc(vals)
        assert idx.check_invariant(vals)


class TestDiscoverNsc:
    def test_fully_sorted(self):
        idx = discover_nsc([1, 2, 3, 4])
        assert idx.patch_count == 0
        assert idx.last_sorted_value == 4

    def test_short_gap_sequence(self):
        idx = discover_nsc([1, 2, 10])
        assert idx.patch_count == 0
        assert idx.last_sorted_value == 10

    def test_ties_allowed(self):
        idx = discover_nsc([1, 1, 2, 2, 2, 3])
        assert idx.patch_count == 0

    def test_descending(self):
        idx = discover_nsc([9, 7, 8, 3], order=SortOrder.DESCENDING)
        assert idx.patch_count == 1
        assert idx.last_sorted_value == 3

    def test_minimal_patch_count_vs_dp_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(1, 300))
            vals = rng.integers(0, 50, size=n)
            patches, _, _ = nsc_patch_rows(vals)
            assert n - len(patches) == lss_length_dp(vals)

    def test_null_always_patch(self):
        idx = discover_nsc([1, NULL_VALUE, 2])
        assert idx.is_patch(1)
        assert idx.patch_count == 1

    def test_invariant_holds(self):
        rng = np.random.default_rng(3)
        vals = rng.integers(0, 1000, size=400)
        for order in (SortOrder.ASCENDING, SortOrder.DESCENDING):
            idx = discover_nsc(vals, order)
            assert idx.check_invariant(vals)

    def test_empty_column(self):
        idx = discover_nsc([])
        assert idx.patch_count == 0
        assert idx.last_sorted_value is None


class TestLss:
    def test_keep_mask_is_monotone(self):
        rng = np.random.default_rng(4)
        vals = rng.integers(0, 30, size=200).tolist()
        keep = lss_keep_mask(vals)
        kept = [vals[i] for i in np.flatnonzero(keep)]
        assert all(a <= b for a, b in zip(kept, kept[1:]))

    def test_single_element(self):
        assert lss_keep_mask([5]).tolist() == [True]


class TestStores:
    def test_drop_rows_empty_noop(self):
        for cls in (BitmapPatchStore, IdentifierPatchStore):
            s = cls(10)
            s.add(np.array([3, 9]))
            s.drop_rows(np.array([], dtype=np.int64))
            assert sorted(s.patch_rows().tolist()) == [3, 9]

    def test_identifier_renumbering(self):
        s = IdentifierPatchStore(10)
        s.add(np.array([3, 9]))
        s.drop_rows(np.array([5]))
        assert s.patch_rows().tolist() == [3, 8]

    def test_identifier_drop_of_patch(self):
        s = IdentifierPatchStore(10)
        s.add(np.array([2, 5, 7]))
        s.drop_rows(np.array([5, 2]))
        assert s.patch_rows().tolist() == [5]

    def test_bitmap_grow_appends_zeros(self):
        s = BitmapPatchStore(5, 64)
        s.add(np.array([4]))
        s.grow(5)
        assert s.mask(10).tolist() == [False] * 4 + [True] + [False] * 5

    def test_rebuild_oracle_for_drop(self):
        # renumbering must equal rebuilding the store from the surviving rows
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = 200
            patch_rows = rng.choice(n, size=40, replace=False)
            dropped = np.sort(rng.choice(n, size=30, replace=False))[::-1]
            survivors = np.setdiff1d(np.arange(n), dropped)
            expected = np.flatnonzero(np.isin(survivors, patch_rows))
            for variant in ("bitmap", "identifiers"):
                idx = PatchIndex.from_patches(NUC, patch_rows, n, store=variant,
                                              shard_size_bits=64)
                idx.drop_rows(dropped)
                assert np.array_equal(idx.store.patch_rows(), expected)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["add", "remove", "drop", "grow"]),
                          st.integers(0, 1_000_000)), max_size=30),
       st.integers(0, 2**31))
def test_store_variants_equivalent(ops, seed):
    rng = np.random.default_rng(seed)
    n = 64
    a = PatchIndex.from_patches(NUC, [], n, store="bitmap", shard_size_bits=64)
    b = PatchIndex.from_patches(NUC, [], n, store="identifiers")
    for name, arg in ops:
        n = a.row_count
        if name == "grow":
            extra = arg % 64
            a.grow(extra)
            b.grow(extra)
        elif n == 0:
            continue
        elif name in ("add", "remove"):
            rows = rng.choice(n, size=min(n, 1 + arg % 8), replace=False)
            getattr(a, name + "_patches")(rows)
            getattr(b, name + "_patches")(rows)
        else:
            k = min(n, 1 + arg % 8)
            rows = np.sort(rng.choice(n, size=k, replace=False))[::-1]
            a.drop_rows(rows)
            b.drop_rows(rows)
    assert a.row_count == b.row_count
    assert np.array_equal(a.patch_mask(), b.patch_mask())


class TestMemory:
    def test_identifier_formula_1e9(self):
        s = IdentifierPatchStore(10**9)
        s._ids = np.arange(10**7, dtype=np.int64)  # e = 0.01
        assert s.memory_bytes() == pytest.approx(80e6, rel=0.01)

    def test_bitmap_formula_1e9(self):
        s = BitmapPatchStore(10**9)
        assert s.memory_bytes() == pytest.approx(10**9 / 8 * 1.0039, rel=0.01)

    def test_crossover_near_one_sixty_fourth(self):
        t = 10**6
        bitmap = BitmapPatchStore(t).memory_bytes()
        below = IdentifierPatchStore(t)
        below._ids = np.arange(int(0.012 * t), dtype=np.int64)
        above = IdentifierPatchStore(t)
        above._ids = np.arange(int(0.020 * t), dtype=np.int64)
        assert below.memory_bytes() < bitmap < above.memory_bytes()


class TestTableIndex:
    def test_nuc_duplicates_global_across_partitions(self):
        parts = [np.array([1, 2, 3]), np.array([3, 4, 5])]
        idx = build_index(parts, NUC)
        assert idx.patch_count == 2
        assert idx.is_patch(2) and idx.is_patch(3)

    def test_nuc_partition_transparency(self):
        rng = np.random.default_rng(6)
        vals = rng.integers(0, 500, size=1000)
        split = np.array_split(vals, 4)
        multi = build_index(split, NUC)
        single = build_index([vals], NUC)
        assert np.array_equal(multi.global_patch_mask(), single.global_patch_mask())

    def test_nsc_partition_local_invariants(self):
        rng = np.random.default_rng(7)
        vals = np.arange(1000)
        exc = rng.choice(1000, size=100, replace=False)
        vals[exc] = rng.integers(0, 1000, size=100)
        split = np.array_split(vals, 4)
        idx = build_index(split, NSC_ASC, threads=2)
        for p, part_vals in enumerate(split):
            assert idx.partitions[p].check_invariant(part_vals)
        # the union can never beat the single-partition optimum
        single = build_index([vals], NSC_ASC)
        assert idx.patch_count <= single.patch_count

    def test_nsc_sorted_input_transparency(self):
        vals = np.arange(1000)
        multi = build_index(np.array_split(vals, 3), NSC_ASC)
        single = build_index([vals], NSC_ASC)
        assert multi.patch_count == single.patch_count == 0

    def test_split_global_routing(self):
        idx = build_index([np.array([1, 2]), np.array([3, 4, 5])], NUC)
        groups = dict(idx.split_global(np.array([0, 1, 2, 4])))
        assert groups[0].tolist() == [0, 1]
        assert groups[1].tolist() == [0, 2]

    def test_global_drop_rows(self):
        parts = [np.array([1, 2, 9]), np.array([9, 4, 5])]
        idx = build_index(parts, NUC)
        assert idx.patch_count == 2
        idx.drop_rows(np.array([3]))  # drop first row of partition 1 (a patch)
        assert idx.row_count == 5
        assert idx.patch_count == 1  # value-9 partner stays patched (superset)

    def test_stats(self):
        idx = build_index([np.array([1, 1, 2])], NUC, column="value")
        s = idx.stats()
        assert s["constraint"] == "nuc"
        assert s["patches"] == 2
        assert s["exception_rate"] == pytest.approx(2 / 3)
        assert s["store"] == "bitmap"
