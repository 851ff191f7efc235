from datetime import date
from decimal import Decimal

import numpy as np
import pytest

from querysynth import jsonio
from querysynth.analyzer.stats import stats_from_values
from querysynth.errors import EncodingError, IngestError, StorageFormatError
from querysynth.models.catalog import ColumnSpec, TableSchema, TypeKind
from querysynth.storage.datagen import generate_tpch, row_counts, write_dataset
from querysynth.storage.encoding import (
    EncodingDecision, EncodingKind, bits_needed, choose_encoding, decode_column, encode_column, pack_bits,
    unpack_bits,
)
from querysynth.storage.index import IndexKind
from querysynth.storage.ingest import Dialect, ingest_delimited
from querysynth.storage.persist import load_table, save_table, stored_table_names
from querysynth.storage.zonemap import build_zone_maps


def _spec(name, type_, nullable=False):
    return ColumnSpec.model_validate({"name": name, "type": type_, "nullable": nullable})


# ===================================================================
# ENCODINGS
# ===================================================================

class TestEncodingChoice:
    def test_decimal_is_scaled_int(self):
        spec = _spec("price", "decimal(12,2)")
        decision = choose_encoding(stats_from_values([Decimal("1.00")]), spec)
        assert decision.kind == EncodingKind.SCALED_INT
        assert decision.scale_factor == 100

    def test_date_is_days_since_epoch(self):
        spec = _spec("d", "date")
        vec = encode_column([date(1970, 1, 2), date(1969, 12, 31)],
                            choose_encoding(stats_from_values([date(1970, 1, 2)]), spec), spec)
        assert vec.encoding == EncodingKind.DATE_DAYS
        assert vec.data.tolist() == [1, -1]

    def test_low_cardinality_strings_are_dictionary_coded(self):
        spec = _spec("flag", "char(1)")
        values = ["b", "a", "b", "c", "a"]
        decision = choose_encoding(stats_from_values(values), spec)
        assert decision.kind == EncodingKind.DICTIONARY
        assert decision.bit_width == 2
        vec = encode_column(values, decision, spec)
        assert vec.dictionary.tolist() == ["b", "a", "c"]
        assert vec.data.tolist() == [0, 1, 0, 2, 1]
        assert vec.data.dtype == np.uint8

    def test_repetitive_ints_are_bit_packed(self):
        spec = _spec("qty", "int")
        values = [5, 5, 6, 5, 6, 5]
        decision = choose_encoding(stats_from_values(values), spec)
        assert decision == EncodingDecision(EncodingKind.BIT_PACKED, bit_width=1, offset=5)
        assert decode_column(encode_column(values, decision, spec)) == values

    def test_unique_ints_stay_raw(self):
        spec = _spec("id", "int")
        decision = choose_encoding(stats_from_values([1, 2, 3, 4]), spec)
        assert decision.kind == EncodingKind.RAW

    def test_bits_needed(self):
        assert bits_needed(0) == 1
        assert bits_needed(1) == 1
        assert bits_needed(2) == 2
        assert bits_needed(255) == 8
        assert bits_needed(256) == 9


class TestEncodeDecode:
    def test_decimal_with_nulls_is_lossless(self):
        spec = _spec("amount", "decimal(10,2)", nullable=True)
        values = [Decimal("1.50"), None, Decimal("-2.25")]
        vec = encode_column(values, EncodingDecision(EncodingKind.SCALED_INT, scale_factor=100), spec)
        assert vec.data.tolist() == [150, 0, -225]
        assert vec.null_mask().tolist() == [False, True, False]
        assert decode_column(vec) == values

    def test_too_many_decimal_places_is_rejected(self):
        spec = _spec("amount", "decimal(10,2)")
        with pytest.raises(EncodingError):
            encode_column([Decimal("1.234")], EncodingDecision(EncodingKind.SCALED_INT, scale_factor=100), spec)

    def test_null_in_non_nullable_column_is_rejected(self):
        spec = _spec("id", "int")
        with pytest.raises(EncodingError):
            encode_column([1, None], EncodingDecision(EncodingKind.RAW), spec)

    def test_bit_packed_value_out_of_range_is_rejected(self):
        spec = _spec("qty", "int")
        with pytest.raises(EncodingError):
            encode_column([1, 9], EncodingDecision(EncodingKind.BIT_PACKED, bit_width=3, offset=0), spec)

    def test_dictionary_overflowing_code_width_is_rejected(self):
        spec = _spec("s", "varchar")
        with pytest.raises(EncodingError):
            encode_column(["a", "b", "c"], EncodingDecision(EncodingKind.DICTIONARY, bit_width=1), spec)

    def test_dictionary_rank_orders_strings(self):
        spec = _spec("s", "varchar")
        vec = encode_column(["pear", "apple", "fig"], EncodingDecision(EncodingKind.DICTIONARY, bit_width=2), spec)
        assert vec.dictionary_rank().tolist() == [2, 0, 1]
        assert vec.code_of("fig") == 2
        assert vec.code_of("kiwi") is None


class TestBitPacking:
    def test_three_bit_values_take_exactly_their_width(self):
        values = np.array([0, 7, 3, 5, 1], dtype=np.uint8)
        buf = pack_bits(values, 3)
        assert len(buf) == 2
        assert unpack_bits(buf, 3, 5).tolist() == values.tolist()

    def test_nibble_packing(self):
        values = np.array([0xA, 0x3], dtype=np.uint8)
        assert pack_bits(values, 4) == bytes([0x3A])

    def test_empty(self):
        assert pack_bits(np.zeros(0, dtype=np.uint8), 5) == b""


# ===================================================================
# ZONE MAPS AND INDEXES
# ===================================================================

class TestZoneMaps:
    def test_one_entry_per_block(self):
        spec = _spec("v", "int")
        vec = encode_column(list(range(5000)), EncodingDecision(EncodingKind.RAW), spec)
        zm = build_zone_maps(vec, block_size=2048)
        assert zm.block_count == 3
        assert zm.mins.tolist() == [0, 2048, 4096]
        assert zm.maxs.tolist() == [2047, 4095, 4999]
        assert zm.block_rows(2) == (4096, 5000)

    def test_nulls_are_counted_not_compared(self):
        spec = _spec("v", "int", nullable=True)
        vec = encode_column([None, None, 4, None, 9, 1], EncodingDecision(EncodingKind.RAW), spec)
        zm = build_zone_maps(vec, block_size=2)
        entries = list(zm.entries())
        assert entries[0] == (0, None, None, 2)
        assert entries[1] == (1, 4, 4, 1)
        assert entries[2] == (2, 1, 9, 0)

    def test_overlapping_blocks(self):
        spec = _spec("v", "int")
        zm = build_zone_maps(encode_column(list(range(10)), EncodingDecision(EncodingKind.RAW), spec), 4)
        assert list(zm.blocks_overlapping(3, 9)) == [0, 1, 2]
        assert list(zm.blocks_overlapping(5, 5)) == []

    def test_block_size_must_be_positive(self):
        spec = _spec("v", "int")
        with pytest.raises(ValueError):
            build_zone_maps(encode_column([1], EncodingDecision(EncodingKind.RAW), spec), 0)


class TestIndexes:
    def test_hash_multimap_postings_are_ascending(self, sales_tables):
        sales = sales_tables["sales"]
        idx = sales.ensure_index("s_region", IndexKind.HASH_MULTIMAP)
        assert idx.index_id == "sales.s_region.hash_multimap"
        key = sales.column("s_region").data[0]
        assert idx.postings(key).tolist() == [0, 1, 5]
        assert idx.postings(99).size == 0

    def test_sorted_index_keys_are_sorted(self, sales_tables):
        idx = sales_tables["sales"].ensure_index("s_id", IndexKind.SORTED_POSITIONS)
        assert idx.keys.tolist() == sorted(idx.keys.tolist())
        assert idx.key_count == 6

    def test_ensure_index_is_idempotent(self, sales_tables):
        sales = sales_tables["sales"]
        first = sales.ensure_index("s_region", IndexKind.HASH_MULTIMAP)
        assert sales.ensure_index("s_region", IndexKind.HASH_MULTIMAP) is first
        assert sales.find_index("s_region") is first

    def test_reencode_keeps_values_and_rebuilds_index(self, sales_tables):
        sales = sales_tables["sales"]
        sales.ensure_index("s_kind", IndexKind.HASH_MULTIMAP)
        before = decode_column(sales.column("s_kind"))
        sales.reencode("s_kind", EncodingDecision(EncodingKind.RAW))
        assert sales.column("s_kind").encoding == EncodingKind.RAW
        assert decode_column(sales.column("s_kind")) == before
        assert sales.find_index("s_kind").postings("online").tolist() == [1, 4]


# ===================================================================
# INGEST AND PERSISTENCE
# ===================================================================

LINE_SCHEMA = TableSchema.model_validate({
    "name": "items",
    "columns": [
        {"name": "id", "type": "int"},
        {"name": "price", "type": "decimal(8,2)"},
        {"name": "shipped", "type": "date"},
        {"name": "note", "type": "varchar(20)", "nullable": True},
    ],
})


class TestIngest:
    def test_trailing_delimiter_and_nulls(self, tmp_path):
        path = tmp_path / "items.tbl"
        path.write_text("1|10.5|1995-03-01|first|\n2|3.25|1996-01-31||\n", encoding="utf-8")
        table = ingest_delimited(path, LINE_SCHEMA)
        assert table.row_count == 2
        assert decode_column(table.column("price")) == [Decimal("10.50"), Decimal("3.25")]
        assert decode_column(table.column("shipped")) == [date(1995, 3, 1), date(1996, 1, 31)]
        assert decode_column(table.column("note")) == ["first", None]

    def test_header_and_custom_delimiter(self, tmp_path):
        path = tmp_path / "items.csv"
        path.write_text("id,price,shipped,note\n7,1,2000-01-01,x\n", encoding="utf-8")
        table = ingest_delimited(path, LINE_SCHEMA, Dialect(delimiter=",", header=True))
        assert decode_column(table.column("id")) == [7]

    def test_bad_field_reports_line_and_column(self, tmp_path):
        path = tmp_path / "items.tbl"
        path.write_text("1|1.00|1995-03-01|a|\n2|oops|1995-03-01|b|\n", encoding="utf-8")
        with pytest.raises(IngestError) as err:
            ingest_delimited(path, LINE_SCHEMA)
        assert err.value.line == 2
        assert err.value.column == "price"

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "items.tbl"
        path.write_text("1|1.00|\n", encoding="utf-8")
        with pytest.raises(IngestError):
            ingest_delimited(path, LINE_SCHEMA)

    def test_null_in_non_nullable_column(self, tmp_path):
        path = tmp_path / "items.tbl"
        path.write_text("|1.00|1995-03-01|a|\n", encoding="utf-8")
        with pytest.raises(IngestError) as err:
            ingest_delimited(path, LINE_SCHEMA)
        assert err.value.column == "id"

    def test_invalid_utf8_reports_line_and_column(self, tmp_path):
        schema = TableSchema.model_validate({"name": "tags", "columns": [
            {"name": "id", "type": "int"}, {"name": "tag", "type": "varchar(8)"}]})
        path = tmp_path / "tags.tbl"
        path.write_bytes(b"1|a|\n2|\xff\xfe|\n")
        with pytest.raises(IngestError) as err:
            ingest_delimited(path, schema)
        assert (err.value.line, err.value.column) == (2, "tag")

    def test_decimal_wider_than_its_precision(self, tmp_path):
        path = tmp_path / "items.tbl"
        path.write_text("1|999999.99|1995-03-01|a|\n2|1000000.00|1995-03-01|b|\n", encoding="utf-8")
        with pytest.raises(IngestError) as err:
            ingest_delimited(path, LINE_SCHEMA)
        assert (err.value.line, err.value.column) == (2, "price")

    def test_string_longer_than_its_declared_length(self, tmp_path):
        path = tmp_path / "items.tbl"
        path.write_text("1|1.00|1995-03-01|" + "x" * 20 + "|\n2|1.00|1995-03-01|" + "y" * 21 + "|\n",
                        encoding="utf-8")
        with pytest.raises(IngestError) as err:
            ingest_delimited(path, LINE_SCHEMA)
        assert (err.value.line, err.value.column) == (2, "note")

    def test_generated_part_comments_fit_their_column(self, tmp_path, tpch_schema):
        paths = write_dataset(tmp_path, scale=0.0005, seed=1)
        part = ingest_delimited(paths["part"], tpch_schema.table("part"))
        assert max(len(c) for c in decode_column(part.column("p_comment"))) <= 23


class TestPersistence:
    @pytest.mark.parametrize("use_mmap", [False, True])
    def test_save_and_load_preserve_every_column(self, tmp_path, sales_tables, use_mmap):
        sales = sales_tables["sales"]
        sales.ensure_index("s_region", IndexKind.HASH_MULTIMAP)
        save_table(sales, tmp_path)
        loaded = load_table(tmp_path, "sales", use_mmap=use_mmap)
        assert loaded.row_count == sales.row_count
        assert loaded.encodings() == sales.encodings()
        for name in sales.schema.column_names:
            assert decode_column(loaded.column(name)) == decode_column(sales.column(name))
        assert sorted(loaded.indexes) == ["sales.s_region.hash_multimap"]
        assert sorted(loaded.zone_maps) == sorted(sales.zone_maps)

    def test_stored_table_names(self, tmp_path, sales_tables):
        for table in sales_tables.values():
            save_table(table, tmp_path)
        assert stored_table_names(tmp_path) == ["regions", "sales"]

    def test_missing_table(self, tmp_path):
        with pytest.raises(StorageFormatError):
            load_table(tmp_path, "nope")

    def test_format_version_mismatch(self, tmp_path, sales_tables):
        out = save_table(sales_tables["regions"], tmp_path)
        meta = jsonio.read_json(out / "meta.json")
        meta["format_version"] = 999
        jsonio.write_json(out / "meta.json", meta)
        with pytest.raises(StorageFormatError):
            load_table(tmp_path, "regions")

    def test_tables_are_frozen_after_load(self, tmp_path, sales_tables):
        save_table(sales_tables["regions"], tmp_path)
        loaded = load_table(tmp_path, "regions")
        assert loaded.frozen
        with pytest.raises(ValueError):
            loaded.column("r_id").data[0] = 42


# ===================================================================
# DATA GENERATION
# ===================================================================

class TestDatagen:
    def test_row_counts_scale_with_a_floor(self):
        counts = row_counts(0.001)
        assert counts["region"] == 5
        assert counts["nation"] == 25
        assert counts["supplier"] == 10
        assert counts["orders"] == 1500
        assert row_counts(0.00001)["supplier"] == 1

    def test_same_seed_same_data(self):
        a = generate_tpch(0.0005, seed=3)
        b = generate_tpch(0.0005, seed=3)
        assert a["lineitem"]["l_extendedprice"] == b["lineitem"]["l_extendedprice"]
        assert a["orders"]["o_orderdate"] == b["orders"]["o_orderdate"]

    def test_lineitems_reference_existing_orders(self, tpch_tables):
        orders = set(decode_column(tpch_tables["orders"].column("o_orderkey")))
        lines = set(decode_column(tpch_tables["lineitem"].column("l_orderkey")))
        assert lines <= orders

    def test_written_dataset_ingests(self, tmp_path, tpch_schema):
        paths = write_dataset(tmp_path, scale=0.0005, seed=1)
        assert (tmp_path / "schema.json").exists()
        nation = ingest_delimited(paths["nation"], tpch_schema.table("nation"))
        assert nation.row_count == 25
        assert nation.schema.column("n_nationkey").type == TypeKind.INT64
