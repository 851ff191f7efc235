"""
Name resolution, typing and normalization: LogicalQuery + Catalog -> BoundQuery.

After binding every ColumnRef carries the FROM alias it resolved to and its type,
constants are folded, and the WHERE/ON conjuncts are split into per-table filters,
equi-join conditions and multi-table residuals.
"""
import logging
from dataclasses import dataclass, replace
from datetime import date
from typing import Dict, List, Optional, Tuple

from querysynth.errors import BindingError, QuerySynthError, UnsupportedConstructError
from querysynth.models.catalog import Catalog, TableSchema, TypeKind
from querysynth.sql import scalar
from querysynth.sql import types as T
from querysynth.sql.ast import (
    AggCall, And, Arith, Between, Case, Cast, ColumnRef, Compare, Expr, Extract, InList,
    InSubquery, IsNull, Like, Literal, LogicalQuery, Neg, Not, Or, OrderItem, SelectItem, Star,
    conjuncts, contains_aggregate, referenced_tables, transform,
)
from querysynth.sql.printer import expr_sql, to_sql

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EquiJoin:
    left: ColumnRef
    right: ColumnRef

    @property
    def aliases(self) -> Tuple[str, str]:
        return self.left.table, self.right.table

    def side_for(self, alias: str) -> ColumnRef:
        return self.left if self.left.table == alias else self.right

    def other_side(self, alias: str) -> ColumnRef:
        return self.right if self.left.table == alias else self.left


@dataclass(frozen=True)
class OutputColumn:
    name: str
    type: T.SqlType
    expr: Expr


@dataclass
class BoundQuery:
    logical: LogicalQuery
    tables: Dict[str, str]                       # FROM alias -> base table, in FROM order
    table_conjuncts: Dict[str, Tuple[Expr, ...]]
    join_conditions: Tuple[EquiJoin, ...]
    residual: Tuple[Expr, ...]
    constant_false: bool
    group_keys: Tuple[Expr, ...]
    aggregates: Tuple[AggCall, ...]
    outputs: Tuple[OutputColumn, ...]
    having: Optional[Expr]
    order_by: Tuple[OrderItem, ...]
    order_outputs: Tuple[Optional[int], ...]     # output index of each ORDER BY key, if any
    limit: Optional[int]
    subqueries: Tuple["BoundQuery", ...] = ()
    is_aggregate: bool = False
    query_id: str = ""

    @property
    def ordered(self) -> bool:
        return bool(self.order_by)

    @property
    def output_names(self) -> List[str]:
        return [o.name for o in self.outputs]

    def base_table(self, alias: str) -> str:
        return self.tables[alias]

    def where_conjuncts(self) -> List[Expr]:
        out: List[Expr] = []
        for alias in self.tables:
            out.extend(self.table_conjuncts.get(alias, ()))
        out.extend(Compare("=", j.left, j.right, T.BOOL) for j in self.join_conditions)
        out.extend(self.residual)
        return out

    def columns_used(self) -> Dict[str, set]:
        """alias -> column names read anywhere in the statement (subqueries excluded)."""
        used: Dict[str, set] = {alias: set() for alias in self.tables}
        exprs: List[Expr] = list(self.where_conjuncts()) + list(self.group_keys)
        exprs += [o.expr for o in self.outputs] + [o.expr for o in self.order_by]
        if self.having is not None:
            exprs.append(self.having)
        for e in exprs:
            for node in e.walk():
                if isinstance(node, ColumnRef) and node.table in used:
                    used[node.table].add(node.name)
        return used

    def join_edges(self) -> List[Tuple[str, str]]:
        """Equi-join pairs as sorted ("table.column", "table.column") over base tables."""
        edges = []
        for j in self.join_conditions:
            a = f"{self.tables[j.left.table]}.{j.left.name}"
            b = f"{self.tables[j.right.table]}.{j.right.name}"
            edges.append(tuple(sorted((a, b))))
        return edges

    def digest(self) -> dict:
        """Compact JSON-ready view used in agent prompts."""
        return {
            "sql": to_sql(self.logical),
            "tables": dict(self.tables),
            "table_filters": {a: [expr_sql(c) for c in cs] for a, cs in self.table_conjuncts.items()},
            "join_conditions": [f"{j.left.qualified} = {j.right.qualified}" for j in self.join_conditions],
            "residual_filters": [expr_sql(r) for r in self.residual],
            "group_by": [expr_sql(g) for g in self.group_keys],
            "aggregates": [expr_sql(a) for a in self.aggregates],
            "outputs": [{"name": o.name, "type": str(o.type)} for o in self.outputs],
            "order_by": [{"expr": expr_sql(o.expr), "desc": o.desc} for o in self.order_by],
            "limit": self.limit,
            "subqueries": [s.digest() for s in self.subqueries],
        }


# ===================================================================
# BINDER
# ===================================================================

def bind_and_validate(query: LogicalQuery, catalog: Catalog, query_id: str = "") -> BoundQuery:
    bound = _Binder(catalog).bind(query)
    bound.query_id = query_id
    return bound


class _Scope:
    def __init__(self, tables: Dict[str, TableSchema], parent: Optional["_Scope"] = None):
        self.tables = tables
        self.parent = parent

    def resolve(self, ref: ColumnRef) -> ColumnRef:
        if ref.table is not None:
            schema = self.tables.get(ref.table)
            if schema is None:
                if self.parent is not None and self.parent.can_resolve(ref):
                    raise UnsupportedConstructError("correlated subquery")
                raise BindingError(f"unknown table or alias '{ref.table}'", ref.table)
            if not schema.has_column(ref.name):
                raise BindingError(f"unknown column '{ref.qualified}'", ref.name)
            return ColumnRef(ref.name, ref.table, T.from_spec(schema.column(ref.name)))
        hits = [alias for alias, schema in self.tables.items() if schema.has_column(ref.name)]
        if not hits:
            if self.parent is not None and self.parent.can_resolve(ref):
                raise UnsupportedConstructError("correlated subquery")
            raise BindingError(f"unknown column '{ref.name}'", ref.name)
        if len(hits) > 1:
            raise BindingError(f"ambiguous column '{ref.name}' (in {', '.join(hits)})", ref.name)
        schema = self.tables[hits[0]]
        return ColumnRef(ref.name, hits[0], T.from_spec(schema.column(ref.name)))

    def can_resolve(self, ref: ColumnRef) -> bool:
        try:
            self.resolve(ref)
            return True
        except QuerySynthError:
            return False


class _Binder:
    def __init__(self, catalog: Catalog, parent: Optional[_Scope] = None):
        self.catalog = catalog
        self.parent = parent
        self.subqueries: List[BoundQuery] = []

    # ---------------------------------------------------------------

    def bind(self, q: LogicalQuery) -> BoundQuery:
        tables: Dict[str, str] = {}
        schemas: Dict[str, TableSchema] = {}
        for item in q.from_:
            ref = item.table
            if ref.name not in self.catalog.tables:
                raise BindingError(f"unknown table '{ref.name}'", ref.name)
            if ref.binding in tables:
                raise BindingError(f"duplicate table alias '{ref.binding}'", ref.binding)
            tables[ref.binding] = ref.name
            schemas[ref.binding] = self.catalog.table(ref.name)
        self.scope = _Scope(schemas, self.parent)

        select_items = self._expand_star(q.select, schemas)
        bound_select = [self.expr(item.expr, allow_agg=True) for item in select_items]
        outputs = []
        for item, e in zip(select_items, bound_select):
            outputs.append(OutputColumn(self._output_name(item, e), e.type, e))

        group_keys = []
        for g in q.group_by:
            g = self._alias_or_ordinal(g, select_items, "GROUP BY")
            bound = self.expr(g, allow_agg=False, clause="GROUP BY")
            group_keys.append(bound)

        having = None
        if q.having is not None:
            having = self._predicate(self._substitute_aliases(q.having, select_items), allow_agg=True,
                                     clause="HAVING")

        order_by, order_outputs = [], []
        for item in q.order_by:
            idx = self._order_output_index(item.expr, select_items)
            if idx is not None:
                bound = outputs[idx].expr
            else:
                bound = self.expr(item.expr, allow_agg=True)
                idx = next((i for i, o in enumerate(outputs) if o.expr == bound), None)
            order_by.append(OrderItem(bound, item.desc))
            order_outputs.append(idx)

        is_aggregate = bool(group_keys) or any(
            contains_aggregate(e) for e in bound_select + [o.expr for o in order_by]
        ) or having is not None
        if is_aggregate:
            for e in bound_select:
                self._check_grouped(e, group_keys, "SELECT")
            for o in order_by:
                self._check_grouped(o.expr, group_keys, "ORDER BY")
            if having is not None:
                self._check_grouped(having, group_keys, "HAVING")

        where_parts = [item.on for item in q.from_ if item.on is not None]
        if q.where is not None:
            where_parts.append(q.where)
        where = None
        if where_parts:
            raw = where_parts[0] if len(where_parts) == 1 else And(tuple(where_parts))
            where = self._predicate(raw, allow_agg=False, clause="WHERE")

        table_conjuncts, joins, residual, constant_false = self._partition(where, tables)

        aggregates: List[AggCall] = []
        for e in bound_select + ([having] if having is not None else []) + [o.expr for o in order_by]:
            for node in e.walk():
                if isinstance(node, AggCall) and node not in aggregates:
                    aggregates.append(node)

        logical = LogicalQuery(
            select=tuple(SelectItem(o.expr, o.name) for o in outputs),
            from_=tuple(replace(item, on=None) for item in q.from_),
            where=where,
            group_by=tuple(group_keys),
            having=having,
            order_by=tuple(order_by),
            limit=q.limit,
            source=q.source,
        )
        return BoundQuery(
            logical=logical,
            tables=tables,
            table_conjuncts=table_conjuncts,
            join_conditions=tuple(joins),
            residual=tuple(residual),
            constant_false=constant_false,
            group_keys=tuple(group_keys),
            aggregates=tuple(aggregates),
            outputs=tuple(outputs),
            having=having,
            order_by=tuple(order_by),
            order_outputs=tuple(order_outputs),
            limit=q.limit,
            subqueries=tuple(self.subqueries),
            is_aggregate=is_aggregate,
        )

    # ---------------------------------------------------------------
    # select list / aliases
    # ---------------------------------------------------------------

    @staticmethod
    def _expand_star(items, schemas) -> List[SelectItem]:
        out = []
        for item in items:
            if isinstance(item.expr, Star):
                for alias, schema in schemas.items():
                    out.extend(SelectItem(ColumnRef(c, alias)) for c in schema.column_names)
            else:
                out.append(item)
        return out

    @staticmethod
    def _output_name(item: SelectItem, bound: Expr) -> str:
        if item.alias:
            return item.alias
        if isinstance(bound, ColumnRef):
            return bound.name
        return expr_sql(item.expr).lower()

    def _alias_or_ordinal(self, e: Expr, select_items: List[SelectItem], clause: str) -> Expr:
        if isinstance(e, Literal) and isinstance(e.value, int) and not isinstance(e.value, bool):
            if not 1 <= e.value <= len(select_items):
                raise BindingError(f"{clause} position {e.value} is out of range")
            return select_items[e.value - 1].expr
        if isinstance(e, ColumnRef) and e.table is None and not self.scope.can_resolve(e):
            for item in select_items:
                if item.alias == e.name:
                    return item.expr
        return e

    def _substitute_aliases(self, e: Expr, select_items: List[SelectItem]) -> Expr:
        def fn(node: Expr) -> Expr:
            if isinstance(node, ColumnRef) and node.table is None and not self.scope.can_resolve(node):
                for item in select_items:
                    if item.alias == node.name:
                        return item.expr
            return node
        return transform(e, fn)

    def _order_output_index(self, e: Expr, select_items: List[SelectItem]) -> Optional[int]:
        if isinstance(e, Literal) and isinstance(e.value, int) and not isinstance(e.value, bool):
            if not 1 <= e.value <= len(select_items):
                raise BindingError(f"ORDER BY position {e.value} is out of range")
            return e.value - 1
        if isinstance(e, ColumnRef) and e.table is None:
            for i, item in enumerate(select_items):
                if item.alias == e.name:
                    return i
        return None

    def _check_grouped(self, e: Expr, keys: List[Expr], clause: str) -> None:
        if e in keys or isinstance(e, (Literal, AggCall)):
            return
        if isinstance(e, ColumnRef):
            raise BindingError(
                f"column '{e.qualified}' in {clause} must appear in GROUP BY or an aggregate", e.name,
            )
        for child in e.children():
            self._check_grouped(child, keys, clause)

    # ---------------------------------------------------------------
    # expressions
    # ---------------------------------------------------------------

    def _predicate(self, e: Expr, allow_agg: bool, clause: str) -> Expr:
        bound = self.expr(e, allow_agg=allow_agg, clause=clause)
        if not (bound.type.is_bool or bound.type.is_null):
            raise BindingError(f"type mismatch: {clause} predicate has type {bound.type}")
        return bound

    def expr(self, e: Expr, allow_agg: bool = False, clause: str = "WHERE") -> Expr:
        bound = self._bind(e, allow_agg, clause, inside_agg=False)
        return fold_constants(bound)

    def _bind(self, e: Expr, allow_agg: bool, clause: str, inside_agg: bool) -> Expr:
        rec = lambda x: self._bind(x, allow_agg, clause, inside_agg)  # noqa: E731

        if isinstance(e, Literal):
            return e if e.type is not None else Literal(e.value, _literal_type(e.value))
        if isinstance(e, ColumnRef):
            return self.scope.resolve(e)
        if isinstance(e, Star):
            raise BindingError("'*' is only valid as the whole select list or in COUNT(*)")
        if isinstance(e, AggCall):
            if not allow_agg:
                raise BindingError(f"aggregate {e.func.upper()} not allowed in {clause}")
            if inside_agg:
                raise BindingError("nested aggregates are not allowed")
            arg = None if e.arg is None else self._bind(e.arg, allow_agg, clause, inside_agg=True)
            return AggCall(e.func, arg, T.aggregate_result(e.func, arg.type if arg else None))
        if isinstance(e, Arith):
            left, right = rec(e.left), rec(e.right)
            return Arith(e.op, left, right, T.arithmetic_result(e.op, left.type, right.type))
        if isinstance(e, Neg):
            operand = rec(e.operand)
            if not (operand.type.is_numeric or operand.type.is_null):
                raise BindingError(f"type mismatch: unary minus on {operand.type}")
            return Neg(operand, operand.type)
        if isinstance(e, Compare):
            left, right = _coerce_dates(rec(e.left), rec(e.right))
            _require_comparable(left.type, right.type, e.op)
            return Compare(e.op, left, right, T.BOOL)
        if isinstance(e, Between):
            operand = rec(e.operand)
            _, low = _coerce_dates(operand, rec(e.low))
            _, high = _coerce_dates(operand, rec(e.high))
            _require_comparable(operand.type, low.type, "BETWEEN")
            _require_comparable(operand.type, high.type, "BETWEEN")
            return Between(operand, low, high, e.negated, T.BOOL)
        if isinstance(e, InList):
            operand = rec(e.operand)
            items = tuple(_coerce_dates(operand, rec(i))[1] for i in e.items)
            for item in items:
                _require_comparable(operand.type, item.type, "IN")
            return InList(operand, items, e.negated, T.BOOL)
        if isinstance(e, InSubquery):
            operand = rec(e.operand)
            sub = _Binder(self.catalog, parent=self.scope).bind(e.query)
            if len(sub.outputs) != 1:
                raise BindingError(f"IN subquery must return one column, returns {len(sub.outputs)}")
            _require_comparable(operand.type, sub.outputs[0].type, "IN")
            ordinal = len(self.subqueries)
            self.subqueries.append(sub)
            return InSubquery(operand, sub.logical, e.negated, ordinal, T.BOOL)
        if isinstance(e, Like):
            operand = rec(e.operand)
            if not (operand.type.is_string or operand.type.is_null):
                raise BindingError(f"type mismatch: LIKE requires a string operand, got {operand.type}")
            return Like(operand, e.pattern, e.negated, T.BOOL)
        if isinstance(e, IsNull):
            return IsNull(rec(e.operand), e.negated, T.BOOL)
        if isinstance(e, (And, Or)):
            items = tuple(rec(i) for i in e.items)
            for item in items:
                _require_bool(item, "AND" if isinstance(e, And) else "OR")
            return type(e)(items, T.BOOL)
        if isinstance(e, Not):
            operand = rec(e.operand)
            _require_bool(operand, "NOT")
            return Not(operand, T.BOOL)
        if isinstance(e, Case):
            whens = []
            for cond, value in e.whens:
                cond = rec(cond)
                _require_bool(cond, "CASE WHEN")
                whens.append((cond, rec(value)))
            default = rec(e.default) if e.default is not None else None
            result = T.unify([v.type for _, v in whens] + ([default.type] if default else []))
            return Case(tuple(whens), default, result)
        if isinstance(e, Extract):
            operand = rec(e.operand)
            if operand.type.kind != TypeKind.DATE and not operand.type.is_null:
                raise BindingError(f"type mismatch: EXTRACT from {operand.type}")
            return Extract(e.part, operand, T.INT64)
        if isinstance(e, Cast):
            return self._cast(rec(e.operand), e.target)
        raise BindingError(f"cannot bind {type(e).__name__}")

    @staticmethod
    def _cast(operand: Expr, target: T.SqlType) -> Expr:
        src = operand.type
        if target.is_numeric:
            if not (src.is_numeric or src.is_null):
                raise BindingError(f"type mismatch: CAST {src} AS {target}")
        elif target.kind == TypeKind.DATE:
            if not (src.kind == TypeKind.DATE or src.is_null
                    or (isinstance(operand, Literal) and isinstance(operand.value, str))):
                raise BindingError(f"type mismatch: CAST {src} AS DATE")
        elif not (src.is_string or src.is_null):
            raise BindingError(f"type mismatch: CAST {src} AS {target}")
        return Cast(operand, target, target)

    # ---------------------------------------------------------------
    # conjunct partition
    # ---------------------------------------------------------------

    @staticmethod
    def _partition(where: Optional[Expr], tables: Dict[str, str]):
        per_table: Dict[str, List[Expr]] = {alias: [] for alias in tables}
        joins: List[EquiJoin] = []
        residual: List[Expr] = []
        constant_false = False
        for c in conjuncts(where):
            refs = referenced_tables(c)
            if not refs:
                if isinstance(c, Literal) and c.value is True:
                    continue
                constant_false = True  # FALSE or NULL constant: nothing qualifies
                residual.append(c)
                continue
            if len(refs) == 1:
                per_table[next(iter(refs))].append(c)
                continue
            if (isinstance(c, Compare) and c.op == "=" and isinstance(c.left, ColumnRef)
                    and isinstance(c.right, ColumnRef) and c.left.table != c.right.table):
                joins.append(EquiJoin(c.left, c.right))
                continue
            residual.append(c)
        return ({a: tuple(cs) for a, cs in per_table.items()}, joins, residual, constant_false)


# ===================================================================
# HELPERS
# ===================================================================

def _literal_type(value) -> T.SqlType:
    if value is None:
        return T.NULL
    if isinstance(value, bool):
        return T.BOOL
    if isinstance(value, int):
        return T.INT64
    if isinstance(value, float):
        return T.DOUBLE
    if isinstance(value, date):
        return T.DATE
    if isinstance(value, str):
        return T.VARCHAR
    scale = max(-value.as_tuple().exponent, 0)
    return T.decimal(max(len(value.as_tuple().digits), scale), scale)


def _coerce_dates(left: Expr, right: Expr) -> Tuple[Expr, Expr]:
    """A string literal compared with a date becomes a date literal."""
    def as_date(lit: Literal) -> Literal:
        try:
            return Literal(date.fromisoformat(lit.value), T.DATE)
        except ValueError:
            raise BindingError(f"type mismatch: '{lit.value}' is not a date") from None

    if left.type.kind == TypeKind.DATE and isinstance(right, Literal) and isinstance(right.value, str):
        right = as_date(right)
    if right.type.kind == TypeKind.DATE and isinstance(left, Literal) and isinstance(left.value, str):
        left = as_date(left)
    return left, right


def _require_comparable(a: T.SqlType, b: T.SqlType, op: str) -> None:
    if not T.comparable(a, b):
        raise BindingError(f"type mismatch: cannot compare {a} {op} {b}")


def _require_bool(e: Expr, op: str) -> None:
    if not (e.type.is_bool or e.type.is_null):
        raise BindingError(f"type mismatch: {op} operand has type {e.type}")


def _all_literal(nodes) -> bool:
    return all(isinstance(n, Literal) for n in nodes)


def fold_constants(e: Expr) -> Expr:
    """Evaluate literal-only subtrees and simplify AND/OR around TRUE/FALSE."""

    def fn(node: Expr) -> Expr:
        if isinstance(node, (Literal, ColumnRef, AggCall, InSubquery)):
            return node
        if isinstance(node, And):
            items = [i for i in node.items if not (isinstance(i, Literal) and i.value is True)]
            if any(isinstance(i, Literal) and i.value is False for i in items):
                return Literal(False, T.BOOL)
            if not items:
                return Literal(True, T.BOOL)
            flat: List[Expr] = []
            for i in items:
                flat.extend(i.items if isinstance(i, And) else [i])
            return flat[0] if len(flat) == 1 else And(tuple(flat), T.BOOL)
        if isinstance(node, Or):
            items = [i for i in node.items if not (isinstance(i, Literal) and i.value is False)]
            if any(isinstance(i, Literal) and i.value is True for i in items):
                return Literal(True, T.BOOL)
            if not items:
                return Literal(False, T.BOOL)
            flat = []
            for i in items:
                flat.extend(i.items if isinstance(i, Or) else [i])
            return flat[0] if len(flat) == 1 else Or(tuple(flat), T.BOOL)
        children = node.children()
        if not children or not _all_literal(children):
            return node
        # deferred import: the evaluator depends on this module's types only
        from querysynth.reference.evaluator import evaluate_scalar
        value = evaluate_scalar(node, {})
        return Literal(scalar.coerce_to_type(value, node.type), node.type)

    return transform(e, fn)
