"""
Reference interpreter: the correctness oracle.

Row-at-a-time over decoded Python scalars. Per-table filters run first, then
nested-loop joins in FROM order (the inner side of an equality is looked up by
bisecting a sorted key list), then sort-based grouping. Single-threaded.
"""
import bisect
import itertools
import logging
import math
from decimal import Context, Decimal, localcontext
from typing import Any, Dict, List, Mapping, Sequence, Tuple

from querysynth.errors import QuerySynthError
from querysynth.reference.evaluator import RowContext, SubqueryKeys, evaluate, is_true
from querysynth.reference.resultset import (
    ResultSet, canonical_row_key, normalize_cell, null_last_key, order_rows,
)
from querysynth.sql import scalar
from querysynth.sql.ast import AggCall, referenced_tables
from querysynth.sql.binder import BoundQuery, EquiJoin
from querysynth.sql.types import TypeKind
from querysynth.storage.encoding import decode_column
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)

_EXACT = Context(prec=80)


class _RowView(Mapping):
    """(alias, column) -> value for one combination of per-table row positions."""

    __slots__ = ("columns", "positions")

    def __init__(self, columns: Dict[str, Dict[str, list]], positions: Dict[str, int]):
        self.columns = columns
        self.positions = positions

    def __getitem__(self, key):
        alias, column = key
        return self.columns[alias][column][self.positions[alias]]

    def __iter__(self):
        for alias, cols in self.columns.items():
            for name in cols:
                yield alias, name

    def __len__(self):
        return sum(len(c) for c in self.columns.values())


def execute_reference(query: BoundQuery, tables: Mapping[str, ColumnarTable]) -> ResultSet:
    subqueries = {}
    for ordinal, sub in enumerate(query.subqueries):
        result = execute_reference(sub, tables)
        values = [row[0] for row in result.rows]
        subqueries[ordinal] = SubqueryKeys(
            frozenset(v for v in values if v is not None), any(v is None for v in values),
        )

    columns = _decode_used(query, tables)
    combos = [] if query.constant_false else _join(query, columns, subqueries)
    logger.debug("reference %s: %d joined rows", query.query_id or "query", len(combos))

    if query.is_aggregate:
        rows, keys = _aggregate(query, columns, combos, subqueries)
    else:
        rows, keys = [], []
        for positions in combos:
            ctx = RowContext(_RowView(columns, positions), subqueries=subqueries)
            rows.append(tuple(normalize_cell(evaluate(o.expr, ctx), o.type) for o in query.outputs))
            keys.append(tuple(evaluate(o.expr, ctx) for o in query.order_by))
    return finish_result(query, rows, keys)


def finish_result(query: BoundQuery, rows: List[tuple], keys: List[tuple]) -> ResultSet:
    """ORDER BY + LIMIT, shared with the compiled-plan path."""
    if query.order_by:
        order = order_rows(rows, keys, [o.desc for o in query.order_by])
        rows = [rows[i] for i in order]
        keys = [keys[i] for i in order]
    elif query.limit is not None:
        # unordered LIMIT keeps the canonically smallest rows
        rows = sorted(rows, key=canonical_row_key)
    cut_in_tie = bool(query.order_by) and query.limit is not None and 0 < query.limit < len(keys) \
        and keys[query.limit - 1] == keys[query.limit]
    if query.limit is not None:
        rows, keys = rows[: query.limit], keys[: query.limit]
    order_columns = list(query.order_outputs) if query.order_by and all(
        i is not None for i in query.order_outputs) else None
    return ResultSet(
        columns=query.output_names,
        types=[o.type for o in query.outputs],
        rows=rows,
        ordered=bool(query.order_by),
        order_columns=order_columns,
        sort_keys=keys if query.order_by else None,
        cut_in_tie=cut_in_tie,
    )


# ===================================================================
# SCAN + JOIN
# ===================================================================

def _decode_used(query: BoundQuery, tables: Mapping[str, ColumnarTable]) -> Dict[str, Dict[str, list]]:
    out: Dict[str, Dict[str, list]] = {}
    for alias, names in query.columns_used().items():
        table = tables.get(query.base_table(alias))
        if table is None:
            raise QuerySynthError(f"table '{query.base_table(alias)}' is not loaded")
        out[alias] = {name: decode_column(table.column(name)) for name in sorted(names)}
        out[alias]["__rows__"] = list(range(table.row_count))
    return out


def _filtered_rows(alias: str, query: BoundQuery, columns, subqueries) -> List[int]:
    conjuncts = query.table_conjuncts.get(alias, ())
    rows = columns[alias]["__rows__"]
    if not conjuncts:
        return list(rows)
    keep = []
    for r in rows:
        ctx = RowContext(_RowView(columns, {alias: r}), subqueries=subqueries)
        if all(is_true(evaluate(c, ctx)) for c in conjuncts):
            keep.append(r)
    return keep


def _join(query: BoundQuery, columns, subqueries) -> List[Dict[str, int]]:
    aliases = list(query.tables)
    candidates = {a: _filtered_rows(a, query, columns, subqueries) for a in aliases}

    first = aliases[0]
    combos: List[Dict[str, int]] = [{first: r} for r in candidates[first]]
    bound = {first}
    pending_joins = list(query.join_conditions)
    pending_residual = list(query.residual)

    for alias in aliases[1:]:
        bound.add(alias)
        ready_joins = [j for j in pending_joins if set(j.aliases) <= bound]
        pending_joins = [j for j in pending_joins if j not in ready_joins]
        ready_residual = [r for r in pending_residual if referenced_tables(r) <= bound]
        pending_residual = [r for r in pending_residual if r not in ready_residual]

        lookup = next((j for j in ready_joins if alias in j.aliases), None)
        inner = _sorted_inner(alias, lookup, columns, candidates[alias]) if lookup else None
        out = []
        for combo in combos:
            if inner is not None:
                outer_ref = lookup.other_side(alias)
                key = columns[outer_ref.table][outer_ref.name][combo[outer_ref.table]]
                rows = _probe(inner, key)
            else:
                rows = candidates[alias]
            for r in rows:
                positions = {**combo, alias: r}
                view = _RowView(columns, positions)
                if all(_join_holds(j, view) for j in ready_joins) and all(
                    is_true(evaluate(res, RowContext(view, subqueries=subqueries)))
                    for res in ready_residual
                ):
                    out.append(positions)
        combos = out
    return combos


def _sorted_inner(alias: str, join: EquiJoin, columns, rows: List[int]) -> Tuple[list, list]:
    ref = join.side_for(alias)
    values = columns[alias][ref.name]
    pairs = sorted(((values[r], r) for r in rows if values[r] is not None), key=lambda p: (p[0], p[1]))
    return [p[0] for p in pairs], [p[1] for p in pairs]


def _probe(inner: Tuple[list, list], key: Any) -> List[int]:
    if key is None:
        return []
    keys, rows = inner
    lo = bisect.bisect_left(keys, key)
    hi = bisect.bisect_right(keys, key, lo)
    return rows[lo:hi]


def _join_holds(j: EquiJoin, view: _RowView) -> bool:
    return scalar.compare("=", view[(j.left.table, j.left.name)], view[(j.right.table, j.right.name)]) is True


# ===================================================================
# GROUPING
# ===================================================================

def _aggregate(query: BoundQuery, columns, combos, subqueries) -> Tuple[List[tuple], List[tuple]]:
    def key_of(positions):
        ctx = RowContext(_RowView(columns, positions), subqueries=subqueries)
        return tuple(evaluate(k, ctx) for k in query.group_keys)

    keyed = [(key_of(p), p) for p in combos]
    keyed.sort(key=lambda kp: tuple(null_last_key(v) for v in kp[0]))
    if query.group_keys:
        groups = [(k, [p for _, p in grp]) for k, grp in itertools.groupby(keyed, key=lambda kp: kp[0])]
    else:
        groups = [((), [p for _, p in keyed])]

    rows, order_keys = [], []
    for key_values, members in groups:
        aggregates = {agg: _aggregate_value(agg, members, columns, subqueries) for agg in query.aggregates}
        representative = _RowView(columns, members[0]) if members else {}
        ctx = RowContext(
            representative,
            aggregates=aggregates,
            keys=dict(zip(query.group_keys, key_values)),
            subqueries=subqueries,
        )
        if query.having is not None and not is_true(evaluate(query.having, ctx)):
            continue
        rows.append(tuple(normalize_cell(evaluate(o.expr, ctx), o.type) for o in query.outputs))
        order_keys.append(tuple(evaluate(o.expr, ctx) for o in query.order_by))
    return rows, order_keys


def _aggregate_value(agg: AggCall, members: Sequence[Dict[str, int]], columns, subqueries) -> Any:
    if agg.arg is None:
        return len(members)
    values = []
    for positions in members:
        v = evaluate(agg.arg, RowContext(_RowView(columns, positions), subqueries=subqueries))
        if v is not None:
            values.append(v)
    if agg.func == "count":
        return len(values)
    if not values:
        return None
    if agg.func == "min":
        return min(values)
    if agg.func == "max":
        return max(values)
    arg_kind = agg.arg.type.kind
    with localcontext(_EXACT):
        if arg_kind == TypeKind.DECIMAL:
            exact = sum(Decimal(v) for v in values)
        elif arg_kind != TypeKind.DOUBLE:
            exact = sum(values)
    if agg.func == "sum":
        if arg_kind == TypeKind.DOUBLE:
            return math.fsum(values)
        return scalar.check_range(exact, agg.type)
    # avg
    if arg_kind == TypeKind.DOUBLE:
        return math.fsum(values) / len(values)
    return float(exact) / len(values)
