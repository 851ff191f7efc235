from decimal import Decimal

import pytest

from querysynth.errors import ArithmeticOverflowError
from querysynth.reference.compare import Tolerances, compare_results
from querysynth.reference.executor import execute_reference
from querysynth.reference.resultset import ResultSet, format_cell, order_rows
from querysynth.sql import types as T
from querysynth.sql.binder import bind_and_validate
from querysynth.sql.parser import parse_sql


@pytest.fixture
def run(sales_tables, sales_catalog):
    def _run(sql):
        return execute_reference(bind_and_validate(parse_sql(sql), sales_catalog, "q"), sales_tables)
    return _run


class TestReferenceExecutor:
    def test_join_group_and_order(self, run):
        result = run("SELECT r_name, SUM(s_amount) AS total, COUNT(*) AS n, COUNT(s_amount) AS c "
                     "FROM sales, regions WHERE s_region = r_id GROUP BY r_name ORDER BY r_name")
        assert result.columns == ["r_name", "total", "n", "c"]
        assert result.ordered
        assert result.rows == [
            ("east", Decimal("1.75"), 1, 1),
            ("north", Decimal("16.75"), 3, 3),
            ("south", Decimal("7.00"), 2, 1),
        ]

    def test_avg_is_a_double_over_non_null_values(self, run):
        (value,), = run("SELECT AVG(s_amount) FROM sales").rows
        assert value == pytest.approx(5.1)

    def test_aggregate_over_nothing_yields_one_row(self, run):
        assert run("SELECT COUNT(*), SUM(s_amount) FROM sales WHERE s_id > 100").rows == [(0, None)]

    def test_order_by_puts_nulls_last_and_limit_cuts(self, run):
        assert run("SELECT s_id FROM sales ORDER BY s_amount DESC LIMIT 2").rows == [(1,), (4,)]
        assert run("SELECT s_id FROM sales ORDER BY s_amount").rows[-1] == (3,)

    def test_order_by_ties_keep_input_order(self, run):
        assert order_rows([(3, "b"), (1, "a"), (2, "c")], [(0,), (0,), (-1,)], [False]) == [2, 0, 1]
        assert order_rows([(3, "b"), (1, "a"), (2, "c")], [(0,), (0,), (None,)], [True]) == [0, 1, 2]
        result = run("SELECT s_id FROM sales ORDER BY s_kind LIMIT 1")
        assert result.rows == [(2,)]
        assert result.cut_in_tie
        assert not run("SELECT s_id FROM sales ORDER BY s_kind LIMIT 2").cut_in_tie

    def test_in_subquery(self, run):
        rows = run("SELECT s_id FROM sales WHERE s_region IN "
                   "(SELECT r_id FROM regions WHERE r_name = 'north')").rows
        assert sorted(rows) == [(1,), (2,), (6,)]

    def test_three_valued_logic_drops_nulls(self, run):
        assert sorted(run("SELECT s_id FROM sales WHERE s_amount > 5").rows) == [(1,), (4,)]
        assert sorted(run("SELECT s_id FROM sales WHERE NOT (s_amount > 5)").rows) == [(2,), (5,), (6,)]
        assert run("SELECT s_id FROM sales WHERE s_amount IS NULL").rows == [(3,)]

    def test_group_by_expression(self, run):
        result = run("SELECT EXTRACT(YEAR FROM s_day) AS y, COUNT(*) AS n FROM sales "
                     "GROUP BY EXTRACT(YEAR FROM s_day) ORDER BY y")
        assert result.rows == [(1995, 3), (1996, 3)]

    def test_having(self, run):
        rows = run("SELECT s_region, COUNT(*) FROM sales GROUP BY s_region HAVING COUNT(*) > 1").rows
        assert sorted(rows) == [(1, 3), (2, 2)]

    def test_case_inside_aggregate(self, run):
        rows = run("SELECT SUM(CASE WHEN s_kind = 'retail' THEN 1 ELSE 0 END) FROM sales").rows
        assert rows == [(4,)]

    def test_constant_false_filter(self, run):
        assert run("SELECT s_id FROM sales WHERE 1 = 0").rows == []

    def test_decimal_overflow_is_an_error(self, run):
        with pytest.raises(ArithmeticOverflowError):
            run("SELECT s_amount * 100000000000000000 FROM sales")


# ===================================================================
# COMPARISON
# ===================================================================

def _result(rows, types=(T.INT64, T.VARCHAR), ordered=False, order_columns=None):
    names = ["a", "b", "c"][: len(types)]
    return ResultSet(columns=names, types=list(types), rows=rows, ordered=ordered,
                     order_columns=order_columns)


class TestCompare:
    def test_unordered_results_compare_as_multisets(self):
        expected = _result([(1, "x"), (2, "y"), (2, "y")])
        actual = _result([(2, "y"), (1, "x"), (2, "y")])
        assert compare_results(expected, actual).matched

    def test_duplicate_counts_matter(self):
        expected = _result([(1, "x"), (2, "y"), (2, "y")])
        actual = _result([(1, "x"), (2, "y")])
        report = compare_results(expected, actual)
        assert not report.matched
        assert report.missing_rows == 1

    def test_ordered_results_compare_by_position(self):
        expected = _result([(1, "x"), (2, "y")], ordered=True, order_columns=[0])
        actual = _result([(2, "y"), (1, "x")], ordered=True, order_columns=[0])
        report = compare_results(expected, actual)
        assert not report.matched
        assert report.first_difference.row == 0

    def test_ties_in_the_order_key_may_come_in_any_order(self):
        expected = _result([(1, "x"), (1, "y"), (2, "z")], ordered=True, order_columns=[0])
        actual = _result([(1, "y"), (1, "x"), (2, "z")], ordered=True, order_columns=[0])
        assert compare_results(expected, actual).matched

    def test_doubles_use_tolerance_exact_types_do_not(self):
        doubles = (T.DOUBLE,)
        assert compare_results(_result([(0.1 + 0.2,)], doubles), _result([(0.3,)], doubles)).matched
        decimals = (T.decimal(10, 2),)
        assert not compare_results(_result([(Decimal("0.30"),)], decimals),
                                   _result([(Decimal("0.31"),)], decimals)).matched

    def test_custom_tolerance(self):
        doubles = (T.DOUBLE,)
        loose = Tolerances(relative=1e-2)
        assert compare_results(_result([(100.0,)], doubles), _result([(100.5,)], doubles), loose).matched
        assert not compare_results(_result([(100.0,)], doubles), _result([(100.5,)], doubles)).matched

    def test_rows_equal_within_tolerance_pair_regardless_of_sort_order(self):
        doubles = (T.DOUBLE, T.DOUBLE)
        expected = _result([(1.0, 1.0), (1.0 + 1e-13, 2.0)], doubles)
        actual = _result([(1.0, 2.0), (1.0 + 1e-13, 1.0)], doubles)
        assert compare_results(expected, actual).matched

    def test_tolerant_pairing_stays_inside_exact_groups(self):
        types = (T.INT64, T.DOUBLE)
        expected = _result([(1, 5.0), (2, 5.0 + 1e-12), (2, 7.0)], types)
        actual = _result([(2, 7.0), (1, 5.0 + 1e-12), (2, 5.0)], types)
        assert compare_results(expected, actual).matched
        report = compare_results(expected, _result([(1, 7.0), (2, 5.0), (2, 5.0)], types))
        assert not report.matched
        assert (report.missing_rows, report.extra_rows) == (2, 2)

    def test_limit_cut_inside_a_tie_accepts_any_rows_with_those_keys(self):
        def cut(rows, keys, cut_in_tie=True):
            return ResultSet(columns=["a", "b"], types=[T.INT64, T.VARCHAR], rows=rows, ordered=True,
                             sort_keys=keys, cut_in_tie=cut_in_tie)

        expected = cut([(1, "a"), (2, "b")], [(1,), (2,)])
        assert compare_results(expected, cut([(1, "a"), (3, "c")], [(1,), (2,)])).matched
        assert not compare_results(expected, cut([(1, "a"), (3, "c")], [(1,), (3,)])).matched
        assert not compare_results(expected, cut([(9, "z"), (2, "b")], [(1,), (2,)])).matched
        assert not compare_results(cut([(1, "a"), (2, "b")], [(1,), (2,)], cut_in_tie=False),
                                   cut([(1, "a"), (3, "c")], [(1,), (2,)])).matched

    def test_null_only_equals_null(self):
        assert compare_results(_result([(None, "x")]), _result([(None, "x")])).matched
        assert not compare_results(_result([(None, "x")]), _result([(0, "x")])).matched

    def test_structural_mismatch(self):
        report = compare_results(_result([(1, "x")]), _result([(1,)], types=(T.INT64,)))
        assert not report.matched
        assert report.message.startswith("structural")

    def test_type_family_mismatch(self):
        report = compare_results(_result([(1, "x")]), _result([(1, 2)], types=(T.INT64, T.INT64)))
        assert report.message.startswith("structural")


def test_cell_formatting():
    assert format_cell(None) == "NULL"
    assert format_cell(Decimal("1.50")) == "1.50"
    assert format_cell(True) == "true"
