import time

import numpy as np
import pytest

from querysynth.errors import ArithmeticOverflowError, KernelContractError, QueryTimeout
from querysynth.kernels.aggregate import AggSpec, Batch, aggregate, aggregate_sequential, finalize
from querysynth.kernels.groupkeys import AggInput, KeyColumn
from querysynth.kernels.hashing import capacity_for, constant_hash, hash64, home_slots
from querysynth.kernels.hashtable import AggHashTable, JoinHashTable, place_linear
from querysynth.kernels.morsel import Deadline, make_morsels, run_morsels
from querysynth.kernels.scan import index_candidates, scan_table
from querysynth.kernels.strategy import (
    AggregationStrategy, StrategyKind, forced_strategy, select_aggregation_strategy,
)
from querysynth.models.catalog import Catalog, TableSchema
from querysynth.models.profile import HardwareProfile
from querysynth.sql import types as T
from querysynth.sql.binder import bind_and_validate
from querysynth.sql.parser import parse_sql
from querysynth.storage.encoding import ColumnVector, EncodingDecision, EncodingKind
from querysynth.storage.index import IndexKind
from querysynth.storage.table import build_table

from tests.conftest import make_table


# ===================================================================
# HASHING
# ===================================================================

class TestHashing:
    def test_hash_is_deterministic_and_seeded(self):
        keys = np.arange(100, dtype=np.int64)
        assert np.array_equal(hash64(keys, 3), hash64(keys, 3))
        assert not np.array_equal(hash64(keys, 3), hash64(keys, 4))

    @pytest.mark.parametrize("n,cap,expected", [(0, 0.7, 2), (1, 0.7, 2), (2, 0.7, 4), (7, 0.7, 16), (8, 0.5, 16)])
    def test_capacity_for(self, n, cap, expected):
        assert capacity_for(n, cap) == expected

    @pytest.mark.parametrize("cap", [0.0, 1.0, 1.5])
    def test_capacity_for_rejects_bad_caps(self, cap):
        with pytest.raises(ValueError):
            capacity_for(10, cap)

    def test_home_slots_stay_in_range(self):
        homes = home_slots(hash64(np.arange(1000, dtype=np.int64)), 64)
        assert homes.min() >= 0 and homes.max() < 64


class TestPlaceLinear:
    def test_collisions_take_the_next_free_slot(self):
        slots = place_linear(np.array([3, 3, 5, 3]), 8)
        assert sorted(slots.tolist()) == [3, 4, 5, 6]
        assert slots[0] == 3

    def test_runs_wrap_around(self):
        slots = place_linear(np.array([7, 7, 7]), 8)
        assert sorted(slots.tolist()) == [0, 1, 7]

    def test_needs_an_empty_slot(self):
        with pytest.raises(KernelContractError):
            place_linear(np.array([0, 1, 2, 3]), 4)


# ===================================================================
# HASH TABLES
# ===================================================================

class TestJoinHashTable:
    def test_probe_returns_every_duplicate(self):
        table = JoinHashTable.build(np.array([5, 7, 5, 9]), np.array([10, 11, 12, 13]))
        rows, payloads = table.probe(np.array([5, 1, 9]))
        assert rows.tolist() == [0, 0, 2]
        assert sorted(payloads[rows == 0].tolist()) == [10, 12]
        assert payloads[rows == 2].tolist() == [13]
        assert table.load_factor <= 0.7

    def test_absent_keys_and_empty_tables(self):
        table = JoinHashTable.build(np.array([1, 2]), np.array([0, 1]))
        rows, payloads = table.probe(np.array([3, 4]))
        assert rows.size == 0 and payloads.size == 0
        empty = JoinHashTable.build(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        assert empty.probe(np.array([1]))[0].size == 0

    def test_selection_restricts_probe_rows(self):
        table = JoinHashTable.build(np.array([1, 2, 3]), np.array([0, 1, 2]))
        rows, _ = table.probe(np.array([1, 2, 3]), selection=np.array([2]))
        assert rows.tolist() == [2]

    def test_worst_case_hash_still_finds_everything(self):
        keys = np.array([4, 4, 8, 15, 16])
        table = JoinHashTable.build(keys, np.arange(5), hash_fn=constant_hash)
        rows, payloads = table.probe(np.array([16, 4]), prefetch_batch=1)
        assert rows.tolist() == [0, 1, 1]
        assert sorted(payloads[rows == 1].tolist()) == [0, 1]

    def test_insert_resizes(self):
        table = JoinHashTable.build(np.array([1]), np.array([0]))
        table.insert(np.arange(2, 50), np.arange(1, 49))
        assert table.resizes == 1
        assert table.count == 49
        assert table.load_factor <= 0.7
        keys, payloads = table.entries()
        assert sorted(keys.tolist()) == list(range(1, 50))

    def test_contract_errors(self):
        with pytest.raises(KernelContractError):
            JoinHashTable.build(np.array([1, 2]), np.array([0]))
        table = JoinHashTable.build(np.array([1]), np.array([0]))
        with pytest.raises(KernelContractError):
            table.probe(np.array([1]), prefetch_batch=0)

    def test_capacity_keeps_load_under_the_cap(self):
        table = JoinHashTable.build(np.arange(1000), np.arange(1000))
        assert table.capacity == 2048

    def test_batch_size_does_not_change_matches(self):
        rng = np.random.default_rng(7)
        keys = rng.integers(0, 300, 2000)
        table = JoinHashTable.build(keys, np.arange(2000))
        probes = rng.integers(0, 400, 5000)
        scalar = table.probe(probes, prefetch_batch=1)
        batched = table.probe(probes, prefetch_batch=16)
        assert np.array_equal(scalar[0], batched[0])
        assert np.array_equal(scalar[1], batched[1])
        expected = sum(int((keys == k).sum()) for k in probes)
        assert len(scalar[0]) == expected

    def test_every_inserted_key_is_found(self):
        keys = np.random.default_rng(3).permutation(5000)
        table = JoinHashTable.build(keys, keys * 2)
        rows, payloads = table.probe(keys)
        assert np.array_equal(rows, np.arange(5000))
        assert np.array_equal(payloads, keys * 2)

    @pytest.mark.slow
    def test_colliding_inserts_terminate_under_the_cap(self):
        n = 1 << 20
        table = JoinHashTable.build(np.zeros(n, dtype=np.int64), np.arange(n))
        assert table.count == n
        assert table.load_factor <= 0.7

    @pytest.mark.slow
    def test_one_key_repeated_a_million_times_is_found_every_time(self):
        n = 1 << 20
        started = time.perf_counter()
        table = JoinHashTable.build(np.zeros(n, dtype=np.int64), np.arange(n))
        rows, payloads = table.probe(np.zeros(1, dtype=np.int64))
        elapsed = time.perf_counter() - started
        assert len(rows) == n
        assert np.array_equal(np.sort(payloads), np.arange(n))
        assert table.load_factor <= 0.5
        assert elapsed < 120


class TestAggHashTable:
    def test_new_keys_get_ids_in_ascending_key_order(self):
        table = AggHashTable(1)
        gids = table.find_or_insert(np.array([[30], [10], [20], [10]]))
        assert gids.tolist() == [2, 0, 1, 0]
        assert table.group_keys().ravel().tolist() == [10, 20, 30]

    def test_ids_survive_resizes(self):
        table = AggHashTable(2, capacity=2)
        first = table.find_or_insert(np.array([[1, 1], [2, 2]]))
        table.find_or_insert(np.column_stack([np.arange(3, 200), np.arange(3, 200)]))
        assert table.resizes > 0
        assert table.lookup(np.array([[1, 1], [2, 2]])).tolist() == first.tolist()
        assert table.count == 199

    def test_lookup_of_absent_keys(self):
        table = AggHashTable(1, hash_fn=constant_hash)
        table.find_or_insert(np.array([[1], [2], [3]]))
        assert table.lookup(np.array([[2], [9]])).tolist() == [1, -1]

    def test_width_must_be_positive(self):
        with pytest.raises(KernelContractError):
            AggHashTable(0)


# ===================================================================
# STRATEGY
# ===================================================================

class TestStrategySelection:
    hw = HardwareProfile()  # 32 KiB L1, 512 KiB L2, 8 MiB L3, 64 B lines

    def test_dense_domain_that_fits_l1(self):
        s = select_aggregation_strategy(100, 16, self.hw, 4, dense_domain=[100])
        assert s.kind == StrategyKind.DIRECT_ARRAY
        assert s.stride_bytes == 64
        assert s.group_domain_size == 100

    def test_dense_domain_too_big_for_l1_goes_to_l2(self):
        s = select_aggregation_strategy(1000, 16, self.hw, 4, dense_domain=[1000])
        assert (s.kind, s.cache_level) == (StrategyKind.PARTITIONED_HASH, "l2")
        assert s.capacity == capacity_for(1000, 0.7)

    def test_oversized_dense_domain_is_ignored(self):
        s = select_aggregation_strategy(10, 8, self.hw, 1, dense_domain=[300, 300])
        assert s.kind == StrategyKind.PARTITIONED_HASH

    def test_l3_across_threads_then_shared(self):
        assert select_aggregation_strategy(100_000, 16, self.hw, 4).cache_level == "l3"
        assert select_aggregation_strategy(100_000, 16, self.hw, 8).kind == StrategyKind.SHARED_CAS

    def test_bad_inputs(self):
        with pytest.raises(KernelContractError):
            select_aggregation_strategy(-1, 8, self.hw, 1)
        with pytest.raises(KernelContractError):
            select_aggregation_strategy(10, 0, self.hw, 1)

    def test_forced_direct_array_needs_a_domain(self):
        with pytest.raises(KernelContractError):
            forced_strategy(StrategyKind.DIRECT_ARRAY, 10, 8, self.hw)
        assert forced_strategy(StrategyKind.SHARED_CAS, 10, 8, self.hw).kind == StrategyKind.SHARED_CAS


# ===================================================================
# MORSELS
# ===================================================================

class TestMorsels:
    def test_morsels_cover_the_range(self):
        morsels = make_morsels(10, 4)
        assert [(m.start, m.end) for m in morsels] == [(0, 4), (4, 8), (8, 10)]
        assert make_morsels(0, 4) == []
        with pytest.raises(KernelContractError):
            make_morsels(10, 0)

    def test_results_come_back_in_morsel_order(self):
        morsels = make_morsels(1000, 7)
        results = run_morsels(lambda _tid, m: m.start, morsels, thread_count=4)
        assert results == [m.start for m in morsels]

    def test_deadline_stops_the_run(self):
        def slow(_tid, m):
            time.sleep(0.02)
            return m.start

        with pytest.raises(QueryTimeout):
            run_morsels(slow, make_morsels(100, 1), thread_count=2, deadline=Deadline(0.01))


# ===================================================================
# SCANS
# ===================================================================

@pytest.fixture
def numbers():
    return make_table("numbers", [("n_id", "int"), ("n_bucket", "int")],
                      [(i, i % 10) for i in range(10_000)], block_size=1000)


def _conjuncts(sql, table):
    bound = bind_and_validate(parse_sql(sql), Catalog(tables={table.name: table.schema}), "q")
    return list(bound.table_conjuncts[table.name])


class TestScan:
    def test_zone_maps_skip_blocks(self, numbers):
        conjuncts = _conjuncts("SELECT n_id FROM numbers WHERE n_id < 1500", numbers)
        result = scan_table(numbers, "numbers", conjuncts)
        assert np.array_equal(result.positions, np.arange(1500))
        assert result.blocks_total == 10
        assert result.blocks_skipped == 8

    def test_without_zone_maps_same_rows(self, numbers):
        conjuncts = _conjuncts("SELECT n_id FROM numbers WHERE n_id < 1500", numbers)
        pruned = scan_table(numbers, "numbers", conjuncts, morsel_size=512, thread_count=3)
        full = scan_table(numbers, "numbers", conjuncts, use_zone_maps=False)
        assert np.array_equal(pruned.positions, full.positions)
        assert full.blocks_skipped == 0

    def test_index_candidates(self, numbers):
        conjuncts = _conjuncts("SELECT n_id FROM numbers WHERE n_bucket = 3", numbers)
        assert index_candidates(numbers, conjuncts, "n_bucket") is None
        numbers.ensure_index("n_bucket", IndexKind.HASH_MULTIMAP)
        candidates = index_candidates(numbers, conjuncts, "n_bucket")
        assert np.array_equal(candidates, np.arange(3, 10_000, 10))
        via_index = scan_table(numbers, "numbers", conjuncts, candidates=candidates)
        assert np.array_equal(via_index.positions, candidates)


# ===================================================================
# AGGREGATION
# ===================================================================

SPECS = [
    AggSpec("sum", T.INT64, T.INT64),
    AggSpec("count", T.INT64, T.INT64),
    AggSpec("count", T.INT64),
    AggSpec("max", T.DOUBLE, T.DOUBLE),
]


@pytest.fixture
def grouped_input():
    rng = np.random.default_rng(5)
    n = 1000
    keys = rng.integers(0, 5, size=n)
    ints = rng.integers(-50, 50, size=n)
    valid = rng.random(n) > 0.2
    doubles = rng.normal(size=n)
    return keys, ints, valid, doubles


def _batch(grouped_input, lo, hi):
    keys, ints, valid, doubles = grouped_input
    sl = slice(lo, hi)
    return Batch(
        keys=keys[sl].reshape(-1, 1).astype(np.int64),
        inputs=[
            AggInput(ints[sl], valid[sl]),
            AggInput(None, valid[sl]),
            AggInput(None, np.ones(hi - lo, dtype=bool)),
            AggInput(doubles[sl], np.ones(hi - lo, dtype=bool)),
        ],
    )


class TestAggregation:
    @pytest.mark.parametrize("strategy", [
        AggregationStrategy(StrategyKind.DIRECT_ARRAY, domain=[5]),
        AggregationStrategy(StrategyKind.PARTITIONED_HASH, capacity=4),
        AggregationStrategy(StrategyKind.SHARED_CAS, capacity=4),
    ], ids=lambda s: s.kind.value)
    def test_strategies_agree_with_the_sequential_baseline(self, grouped_input, strategy):
        baseline = aggregate_sequential(_batch(grouped_input, 0, 1000), SPECS)
        key_column = KeyColumn(T.INT64, dense_base=0, dense_size=5, nullable=False)
        state = aggregate(lambda m: _batch(grouped_input, m.start, m.end), make_morsels(1000, 64), SPECS,
                          [key_column], strategy, thread_count=3)
        assert np.array_equal(state.keys, baseline.keys)
        for got, want in zip(finalize(state, SPECS), finalize(baseline, SPECS)):
            np.testing.assert_allclose(got.data, want.data)

    def test_baseline_values(self, grouped_input):
        keys, ints, valid, doubles = grouped_input
        state = aggregate_sequential(_batch(grouped_input, 0, 1000), SPECS)
        sums, non_null, rows, maxima = finalize(state, SPECS)
        for g, key in enumerate(state.keys.ravel()):
            members = keys == key
            assert sums.data[g] == ints[members & valid].sum()
            assert non_null.data[g] == (members & valid).sum()
            assert rows.data[g] == members.sum()
            assert maxima.data[g] == doubles[members].max()

    def test_all_null_group_sums_to_null(self):
        batch = Batch(keys=np.array([[1], [1]]), inputs=[AggInput(np.array([4, 5]), np.array([False, False]))])
        (sums,) = finalize(aggregate_sequential(batch, SPECS[:1]), SPECS[:1])
        assert sums.nulls.tolist() == [True]

    def test_sum_overflow_is_detected(self):
        big = np.full(4, 1 << 62, dtype=np.int64)
        batch = Batch(keys=np.zeros((4, 1), dtype=np.int64), inputs=[AggInput(big, np.ones(4, dtype=bool))])
        state = aggregate_sequential(batch, SPECS[:1])
        with pytest.raises(ArithmeticOverflowError):
            finalize(state, SPECS[:1])

    def test_direct_array_rejects_keys_outside_the_domain(self, grouped_input):
        strategy = AggregationStrategy(StrategyKind.DIRECT_ARRAY, domain=[3])
        key_column = KeyColumn(T.INT64, dense_base=0, dense_size=3, nullable=False)
        with pytest.raises(KernelContractError):
            aggregate(lambda m: _batch(grouped_input, m.start, m.end), make_morsels(1000, 500), SPECS,
                      [key_column], strategy)


# ===================================================================
# ACCEPTANCE SCALE
# ===================================================================

def _median_seconds(fn, repeats=5):
    fn()
    samples = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - started)
    return float(np.median(samples))


def _same_groups(got, want, specs):
    assert np.array_equal(got.keys, want.keys)
    for g, w in zip(finalize(got, specs), finalize(want, specs)):
        np.testing.assert_allclose(g.data, w.data, atol=1e-9)
        assert np.array_equal(g.nulls if g.nulls is not None else np.zeros(len(g.data), dtype=bool),
                              w.nulls if w.nulls is not None else np.zeros(len(w.data), dtype=bool))


@pytest.mark.slow
class TestAtScale:
    def test_direct_array_beats_shared_table_on_six_dictionary_groups(self):
        n = 10_000_000
        rng = np.random.default_rng(11)
        codes = rng.integers(0, 6, n).astype(np.int64).reshape(-1, 1)
        amounts = rng.integers(0, 1000, n).astype(np.int64)
        ones = np.ones(n, dtype=bool)
        specs = [AggSpec("count", T.INT64), AggSpec("sum", T.INT64, T.INT64)]
        key_column = KeyColumn(T.VARCHAR, dense_base=0, dense_size=6, nullable=False)
        morsels = make_morsels(n, 65536)

        def produce(m):
            sl = slice(m.start, m.end)
            return Batch(keys=codes[sl], inputs=[AggInput(None, ones[sl]), AggInput(amounts[sl], ones[sl])])

        runs = {}
        for kind, strategy in [
            ("direct", AggregationStrategy(StrategyKind.DIRECT_ARRAY, domain=[6])),
            ("shared", AggregationStrategy(StrategyKind.SHARED_CAS, capacity=16)),
        ]:
            runs[kind] = _median_seconds(lambda s=strategy: aggregate(produce, morsels, specs, [key_column], s))
        assert runs["shared"] >= 2 * runs["direct"]

        direct = aggregate(produce, morsels, specs, [key_column],
                           AggregationStrategy(StrategyKind.DIRECT_ARRAY, domain=[6]))
        shared = aggregate(produce, morsels, specs, [key_column],
                           AggregationStrategy(StrategyKind.SHARED_CAS, capacity=16))
        _same_groups(direct, shared, specs)
        assert direct.group_count == 6

    def test_a_million_groups_never_get_a_direct_array(self):
        hw = HardwareProfile()
        for threads in (1, 8):
            chosen = select_aggregation_strategy(1_000_000, 16, hw, threads, dense_domain=[1_000_000])
            assert chosen.kind in (StrategyKind.SHARED_CAS, StrategyKind.PARTITIONED_HASH)
        with pytest.raises(KernelContractError):
            forced_strategy(StrategyKind.DIRECT_ARRAY, 1_000_000, 16, hw, dense_domain=[1_000_000])

    def test_zone_maps_skip_most_blocks_of_a_clustered_column(self):
        n = 10_000_000
        schema = TableSchema.model_validate({"name": "clustered", "columns": [{"name": "c_key", "type": "int"}]})
        vector = ColumnVector(spec=schema.column("c_key"), decision=EncodingDecision(EncodingKind.RAW),
                              data=np.arange(n, dtype=np.int64))
        table = build_table("clustered", schema, {"c_key": vector}, block_size=2048)
        conjuncts = _conjuncts("SELECT c_key FROM clustered WHERE c_key < 100000", table)

        pruned = scan_table(table, "clustered", conjuncts)
        full = scan_table(table, "clustered", conjuncts, use_zone_maps=False)
        assert np.array_equal(pruned.positions, full.positions)
        assert np.array_equal(pruned.positions, np.arange(100_000))
        assert pruned.blocks_skipped >= 0.9 * pruned.blocks_total

        pruned_s = _median_seconds(lambda: scan_table(table, "clustered", conjuncts))
        full_s = _median_seconds(lambda: scan_table(table, "clustered", conjuncts, use_zone_maps=False))
        assert full_s >= 3 * pruned_s

    def test_every_strategy_matches_the_sequential_baseline_on_random_inputs(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 400))
            domain = [int(d) for d in rng.integers(1, 9, int(rng.integers(1, 3)))]
            keys = np.column_stack([rng.integers(0, d, n) for d in domain]).astype(np.int64)
            ints = rng.integers(-1000, 1000, n).astype(np.int64)
            doubles = rng.normal(size=n)
            valid = rng.random(n) > rng.random()
            specs = [AggSpec("count", T.INT64), AggSpec("sum", T.INT64, T.INT64),
                     AggSpec("min", T.INT64, T.INT64), AggSpec("max", T.DOUBLE, T.DOUBLE),
                     AggSpec("sum", T.DOUBLE, T.DOUBLE)]

            def produce(m, keys=keys, ints=ints, doubles=doubles, valid=valid):
                sl = slice(m.start, m.end)
                return Batch(keys=keys[sl], inputs=[
                    AggInput(None, np.ones(m.end - m.start, dtype=bool)), AggInput(ints[sl], valid[sl]),
                    AggInput(ints[sl], valid[sl]), AggInput(doubles[sl], valid[sl]),
                    AggInput(doubles[sl], valid[sl]),
                ])

            baseline = aggregate_sequential(produce(make_morsels(n, n)[0]), specs)
            key_columns = [KeyColumn(T.INT64, dense_base=0, dense_size=d, nullable=False) for d in domain]
            morsels = make_morsels(n, int(rng.integers(1, 65)))
            threads = int(rng.integers(1, 5))
            for strategy in (AggregationStrategy(StrategyKind.DIRECT_ARRAY, domain=domain),
                             AggregationStrategy(StrategyKind.PARTITIONED_HASH, capacity=4),
                             AggregationStrategy(StrategyKind.SHARED_CAS, capacity=4)):
                state = aggregate(produce, morsels, specs, key_columns, strategy, thread_count=threads)
                _same_groups(state, baseline, specs)
