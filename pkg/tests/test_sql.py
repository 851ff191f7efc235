from datetime import date
from decimal import Decimal

import pytest

from querysynth.errors import BindingError, SqlSyntaxError, UnsupportedConstructError
from querysynth.models.catalog import TypeKind
from querysynth.sql.ast import Compare, ColumnRef, Literal
from querysynth.sql.binder import bind_and_validate
from querysynth.sql.parser import parse_sql
from querysynth.sql.printer import to_sql
from querysynth.sql.randgen import random_queries
from querysynth.sql.scalar import like, like_kind

from tests.conftest import QUERIES_DIR


def bind(sql, catalog):
    return bind_and_validate(parse_sql(sql), catalog, "q")


# ===================================================================
# PARSER
# ===================================================================

class TestParser:
    def test_clauses(self):
        q = parse_sql("SELECT s_kind, SUM(s_amount) AS total FROM sales WHERE s_id > 1 "
                      "GROUP BY s_kind ORDER BY total DESC LIMIT 2")
        assert [i.alias for i in q.select] == [None, "total"]
        assert len(q.group_by) == 1
        assert q.order_by[0].desc
        assert q.limit == 2

    def test_interval_arithmetic_folds_to_a_date(self):
        q = parse_sql("SELECT a FROM t WHERE d <= DATE '1998-12-01' - INTERVAL '90' DAY")
        assert isinstance(q.where, Compare)
        assert q.where.right == Literal(date(1998, 9, 2), q.where.right.type)

    def test_month_interval(self):
        q = parse_sql("SELECT a FROM t WHERE d < DATE '1995-01-31' + INTERVAL '1' MONTH")
        assert q.where.right.value == date(1995, 2, 28)

    def test_decimal_literal_keeps_its_scale(self):
        q = parse_sql("SELECT a FROM t WHERE x = 0.06")
        lit = q.where.right
        assert lit.value == Decimal("0.06")
        assert lit.type.scale == 2

    def test_negated_predicates(self):
        q = parse_sql("SELECT a FROM t WHERE a NOT LIKE 'x%' AND b NOT IN (1, 2)")
        assert all(item.negated for item in q.where.items)

    @pytest.mark.parametrize("sql", [
        "SELECT DISTINCT a FROM t",
        "SELECT a FROM t UNION SELECT a FROM u",
        "SELECT a FROM t LEFT JOIN u ON t.a = u.a",
        "WITH x AS (SELECT a FROM t) SELECT a FROM x",
        "SELECT a, ROW_NUMBER() OVER (ORDER BY a) FROM t",
        "SELECT a FROM t WHERE EXISTS (SELECT b FROM u)",
        "SELECT a FROM (SELECT a FROM t) AS s",
        "SELECT COUNT(DISTINCT a) FROM t",
    ])
    def test_constructs_outside_the_subset_are_named(self, sql):
        with pytest.raises(UnsupportedConstructError):
            parse_sql(sql)

    @pytest.mark.parametrize("sql", ["", "   ", "SELECT a FROM t; SELECT b FROM t"])
    def test_syntax_errors(self, sql):
        with pytest.raises(SqlSyntaxError):
            parse_sql(sql)

    def test_bad_date_literal(self):
        with pytest.raises(SqlSyntaxError):
            parse_sql("SELECT a FROM t WHERE d = DATE '1995-13-45'")

    @pytest.mark.parametrize("name", ["q3", "q6"])
    def test_printed_sql_parses_back_to_the_same_query(self, name):
        original = parse_sql((QUERIES_DIR / f"{name}.sql").read_text())
        assert parse_sql(to_sql(original)) == original


# ===================================================================
# BINDER
# ===================================================================

class TestBinder:
    def test_conjuncts_are_partitioned(self, sales_catalog):
        q = bind("SELECT r_name, SUM(s_amount) FROM sales, regions "
                 "WHERE s_region = r_id AND s_kind = 'retail' GROUP BY r_name", sales_catalog)
        assert len(q.join_conditions) == 1
        assert len(q.table_conjuncts["sales"]) == 1
        assert q.table_conjuncts["regions"] == ()
        assert q.join_edges() == [("regions.r_id", "sales.s_region")]
        assert q.is_aggregate

    def test_decimal_result_scales(self, sales_catalog):
        q = bind("SELECT s_amount * s_amount AS sq, s_amount + 1 AS inc, s_amount / 2 AS half FROM sales",
                 sales_catalog)
        sq, inc, half = (o.type for o in q.outputs)
        assert (sq.kind, sq.scale) == (TypeKind.DECIMAL, 4)
        assert (inc.kind, inc.scale) == (TypeKind.DECIMAL, 2)
        assert half.kind == TypeKind.DOUBLE

    def test_ordinals_and_aliases(self, sales_catalog):
        q = bind("SELECT s_kind AS k, COUNT(*) AS n FROM sales GROUP BY 1 ORDER BY k", sales_catalog)
        assert q.group_keys[0] == ColumnRef("s_kind", "sales", q.group_keys[0].type)
        assert q.order_outputs == (0,)
        assert q.output_names == ["k", "n"]

    def test_string_compared_with_date_becomes_a_date(self, sales_catalog):
        q = bind("SELECT s_id FROM sales WHERE s_day >= '1996-01-01'", sales_catalog)
        assert q.table_conjuncts["sales"][0].right.value == date(1996, 1, 1)

    def test_constant_false_filter(self, sales_catalog):
        q = bind("SELECT s_id FROM sales WHERE 1 = 0", sales_catalog)
        assert q.constant_false

    def test_true_conjuncts_are_dropped(self, sales_catalog):
        q = bind("SELECT s_id FROM sales WHERE 1 = 1 AND s_id > 2", sales_catalog)
        assert not q.constant_false
        assert len(q.table_conjuncts["sales"]) == 1

    def test_in_subquery(self, sales_catalog):
        q = bind("SELECT s_id FROM sales WHERE s_region IN (SELECT r_id FROM regions WHERE r_name = 'north')",
                 sales_catalog)
        assert len(q.subqueries) == 1

    @pytest.mark.parametrize("sql", [
        "SELECT nope FROM sales",
        "SELECT s_id FROM nowhere",
        "SELECT x.s_id FROM sales",
        "SELECT s_id FROM sales a, sales b",
        "SELECT s_kind, s_amount FROM sales GROUP BY s_kind",
        "SELECT s_id FROM sales WHERE SUM(s_amount) > 1",
        "SELECT s_id FROM sales WHERE s_kind > 3",
        "SELECT s_id FROM sales WHERE s_id",
        "SELECT SUM(s_kind) FROM sales",
        "SELECT s_id FROM sales ORDER BY 3",
    ])
    def test_binding_errors(self, sql, sales_catalog):
        with pytest.raises(BindingError):
            bind(sql, sales_catalog)

    def test_correlated_subquery_is_unsupported(self, sales_catalog):
        with pytest.raises(UnsupportedConstructError):
            bind("SELECT s_id FROM sales WHERE s_region IN (SELECT r_id FROM regions WHERE r_id = s_id)",
                 sales_catalog)

    def test_digest_is_json_ready(self, sales_catalog):
        digest = bind("SELECT s_kind, COUNT(*) FROM sales GROUP BY s_kind", sales_catalog).digest()
        assert digest["tables"] == {"sales": "sales"}
        assert digest["group_by"] == ["sales.s_kind"]
        assert digest["outputs"][1]["type"] == "int64"

    @pytest.mark.parametrize("name", ["q1", "q3", "q6", "q9", "q18"])
    def test_bundled_queries_bind(self, name, tpch_schema):
        q = bind_and_validate(parse_sql((QUERIES_DIR / f"{name}.sql").read_text()), tpch_schema, name)
        assert q.query_id == name
        assert q.outputs


# ===================================================================
# SCALARS AND RANDOM QUERIES
# ===================================================================

class TestLike:
    @pytest.mark.parametrize("pattern,kind", [
        ("abc%", "prefix"), ("%abc", "suffix"), ("%abc%", "contains"), ("abc", "exact"), ("a_c%", "regex"),
    ])
    def test_pattern_kinds(self, pattern, kind):
        assert like_kind(pattern) == kind

    def test_matching_is_case_sensitive(self):
        assert like("PROMO BRUSHED", "PROMO%")
        assert not like("promo brushed", "PROMO%")
        assert like("abc", "a_c")
        assert like(None, "%") is None


class TestRandomQueries:
    def test_generated_queries_bind(self, tpch_tables, tpch_schema):
        for rq in random_queries(tpch_tables, 25, seed=7):
            bound = bind_and_validate(parse_sql(rq.sql), tpch_schema)
            assert set(bound.tables.values()) == set(rq.tables)

    def test_same_seed_same_queries(self, tpch_tables):
        a = [q.sql for q in random_queries(tpch_tables, 5, seed=11)]
        b = [q.sql for q in random_queries(tpch_tables, 5, seed=11)]
        assert a == b
