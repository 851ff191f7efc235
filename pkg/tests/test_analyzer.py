from decimal import Decimal

import numpy as np
import pytest
from pydantic import ValidationError

from querysynth.analyzer.hardware import _probe_sysfs, probe_hardware
from querysynth.analyzer.joins import extract_join_graph
from querysynth.analyzer.profile import build_workload_profile, load_profile, profile_json, save_profile
from querysynth.analyzer.selectivity import SamplePolicy, estimate_selectivity, sample_positions
from querysynth.analyzer.stats import compute_column_stats
from querysynth.models.profile import ColumnStats, HardwareProfile
from querysynth.sql.binder import bind_and_validate
from querysynth.sql.parser import parse_sql

JOIN_SQL = "SELECT r_name, COUNT(*) FROM sales, regions WHERE s_region = r_id AND s_kind = 'retail' GROUP BY r_name"


def bind(sql, catalog, query_id="q"):
    return bind_and_validate(parse_sql(sql), catalog, query_id)


class TestHardware:
    def test_defaults_without_probing(self):
        hw = probe_hardware(probe=False)
        assert hw == HardwareProfile()
        assert hw.source == "defaults"

    def test_overrides_win_and_bad_ones_are_rejected(self):
        hw = probe_hardware({"l1": 65536, "cache_line": 48, "turbo": 1, "cores": "two"}, probe=False)
        assert hw.l1_bytes == 65536
        assert hw.cache_line_bytes == 64
        assert hw.core_count == HardwareProfile().core_count
        assert hw.source == "override"
        assert len(hw.warnings) == 3

    def test_sysfs_cache_sizes(self, tmp_path):
        def cache(index, level, kind, size, line="64"):
            entry = tmp_path / "cpu0" / "cache" / f"index{index}"
            entry.mkdir(parents=True)
            for name, text in (("level", level), ("type", kind), ("size", size), ("coherency_line_size", line)):
                (entry / name).write_text(text + "\n")

        cache(0, "1", "Data", "48K")
        cache(1, "1", "Instruction", "32K")
        cache(2, "2", "Unified", "2048K")
        cache(3, "3", "Unified", "32M")
        assert _probe_sysfs(tmp_path) == {
            "l1_bytes": 48 * 1024, "l2_bytes": 2 * 1024 * 1024, "l3_bytes": 32 * 1024 * 1024,
            "cache_line_bytes": 64,
        }

    def test_missing_sysfs_is_empty(self, tmp_path):
        assert _probe_sysfs(tmp_path / "absent") == {}

    def test_profile_invariants(self):
        with pytest.raises(ValidationError):
            HardwareProfile(cache_line_bytes=48)
        with pytest.raises(ValidationError):
            HardwareProfile(l2_bytes=0)


class TestColumnStats:
    def test_stats_per_column(self, sales_tables):
        stats = compute_column_stats(sales_tables["sales"])
        amount = stats["s_amount"]
        assert (amount.row_count, amount.ndv, amount.null_count) == (6, 5, 1)
        assert Decimal(amount.min) == Decimal("1.75")
        assert Decimal(amount.max) == Decimal("10.5")
        assert (stats["s_kind"].min, stats["s_kind"].max, stats["s_kind"].ndv) == ("online", "retail", 2)
        assert stats["s_day"].min == "1995-01-03"
        assert stats["s_id"].max == 6

    def test_ndv_cannot_exceed_non_null_rows(self):
        with pytest.raises(ValidationError):
            ColumnStats(row_count=3, ndv=3, null_count=1)


class TestSelectivity:
    def conjunct(self, sql, catalog):
        return bind(sql, catalog).table_conjuncts["sales"][0]

    def test_full_scan_counts_true_rows(self, sales_tables, sales_catalog):
        est = estimate_selectivity(self.conjunct("SELECT s_id FROM sales WHERE s_kind = 'retail'", sales_catalog),
                                   sales_tables["sales"])
        assert est.estimate == pytest.approx(4 / 6)
        assert (est.method, est.sample_size) == ("full_scan", 6)

    def test_null_is_not_true(self, sales_tables, sales_catalog):
        est = estimate_selectivity(self.conjunct("SELECT s_id FROM sales WHERE s_amount > 5", sales_catalog),
                                   sales_tables["sales"])
        assert est.estimate == pytest.approx(2 / 6)

    def test_sampling(self, sales_tables, sales_catalog):
        est = estimate_selectivity(self.conjunct("SELECT s_id FROM sales WHERE s_id > 0", sales_catalog),
                                   sales_tables["sales"], SamplePolicy(n=3, seed=1))
        assert (est.method, est.sample_size, est.estimate) == ("sample", 3, 1.0)

    def test_sample_positions_are_fixed_by_seed(self):
        a = sample_positions(1000, SamplePolicy(n=50, seed=9))
        assert np.array_equal(a, sample_positions(1000, SamplePolicy(n=50, seed=9)))
        assert len(np.unique(a)) == 50
        assert np.all(np.diff(a) > 0)
        assert np.array_equal(sample_positions(10, SamplePolicy(n=50)), np.arange(10))


class TestWorkloadProfile:
    def test_join_graph_counts_queries(self, sales_catalog):
        queries = [bind(JOIN_SQL, sales_catalog, "a"),
                   bind("SELECT s_id FROM sales, regions WHERE r_id = s_region", sales_catalog, "b"),
                   bind("SELECT s_id FROM sales", sales_catalog, "c")]
        graph = extract_join_graph(queries)
        assert graph.nodes == ["regions", "sales"]
        assert [(e.left, e.right, e.frequency) for e in graph.edges] == [("regions.r_id", "sales.s_region", 2)]

    def test_profile_contents_and_round_trip(self, sales_tables, sales_catalog, tmp_path):
        profile = build_workload_profile(sales_tables, [bind(JOIN_SQL, sales_catalog)], HardwareProfile())
        assert profile.tables["regions"].row_count == 3
        assert profile.tables["sales"].encodings["s_kind"].startswith("dictionary")
        assert [s.predicate for s in profile.selectivities["q"]] == ["(sales.s_kind = 'retail')"]
        assert profile.warnings == []
        save_profile(profile, tmp_path / "profile.json")
        assert load_profile(tmp_path / "profile.json") == profile
        assert profile_json(profile) == profile_json(load_profile(tmp_path / "profile.json"))

    def test_dangling_join_endpoint_is_a_warning(self, sales_tables, sales_catalog):
        query = bind("SELECT s_id FROM sales, regions WHERE s_region = r_id", sales_catalog)
        profile = build_workload_profile({"sales": sales_tables["sales"]}, [query], HardwareProfile())
        assert profile.warnings == ["join edge endpoint regions.r_id not in the catalog"]

    def test_filter_on_a_missing_table_is_a_warning(self, sales_tables, sales_catalog):
        query = bind("SELECT s_id FROM sales, regions WHERE s_region = r_id AND r_name = 'north' "
                     "AND s_kind = 'retail'", sales_catalog)
        profile = build_workload_profile({"sales": sales_tables["sales"]}, [query], HardwareProfile())
        assert "q: filtered table regions not in the catalog" in profile.warnings
        assert "join edge endpoint regions.r_id not in the catalog" in profile.warnings
        [estimate] = profile.selectivities["q"]
        assert estimate.table == "sales"
        assert estimate.estimate == pytest.approx(4 / 6)
