"""
SQL text -> LogicalQuery.

sqlglot does the tokenizing and parsing; this module converts its expression tree
into our AST and rejects everything outside the supported subset with an explicit
UnsupportedConstructError.
"""
import logging
from dataclasses import replace
from datetime import date
from decimal import Decimal
from typing import List, Optional

import sqlglot
from dateutil.relativedelta import relativedelta
from sqlglot import exp
from sqlglot.errors import ParseError, TokenError

from querysynth.errors import SqlSyntaxError, UnsupportedConstructError
from querysynth.sql import types as T
from querysynth.sql.ast import (
    AggCall, And, Arith, Between, Case, Cast, ColumnRef, Compare, Expr, Extract, FromItem,
    InList, InSubquery, IsNull, Like, Literal, LogicalQuery, Neg, Not, Or, OrderItem,
    SelectItem, Star, TableRef,
)

logger = logging.getLogger(__name__)

_ARITH = {exp.Add: "+", exp.Sub: "-", exp.Mul: "*", exp.Div: "/"}
_COMPARE = {exp.EQ: "=", exp.NEQ: "<>", exp.LT: "<", exp.LTE: "<=", exp.GT: ">", exp.GTE: ">="}
_AGGS = {exp.Sum: "sum", exp.Count: "count", exp.Avg: "avg", exp.Min: "min", exp.Max: "max"}
_EXTRACT_PARTS = ("year", "month", "day")

# Select-level clauses outside the subset
_REJECTED_CLAUSES = (
    ("with", "CTE (WITH)"),
    ("distinct", "DISTINCT"),
    ("windows", "WINDOW clause"),
    ("qualify", "QUALIFY"),
    ("laterals", "LATERAL"),
    ("offset", "OFFSET"),
)

_CAST_TYPES = {
    "DECIMAL": T.TypeKind.DECIMAL, "NUMERIC": T.TypeKind.DECIMAL,
    "DOUBLE": T.TypeKind.DOUBLE, "FLOAT": T.TypeKind.DOUBLE, "REAL": T.TypeKind.DOUBLE,
    "BIGINT": T.TypeKind.INT64, "INT": T.TypeKind.INT64, "INTEGER": T.TypeKind.INT64,
    "DATE": T.TypeKind.DATE,
    "VARCHAR": T.TypeKind.VARCHAR, "TEXT": T.TypeKind.VARCHAR, "CHAR": T.TypeKind.VARCHAR,
}


def parse_sql(text: str) -> LogicalQuery:
    if not text or not text.strip():
        raise SqlSyntaxError("empty query text")
    try:
        statements = [s for s in sqlglot.parse(text) if s is not None]
    except ParseError as exc:
        first = exc.errors[0] if exc.errors else {}
        raise SqlSyntaxError(
            first.get("description") or str(exc), first.get("line") or 0, first.get("col") or 0,
        ) from None
    except TokenError as exc:
        raise SqlSyntaxError(str(exc)) from None
    if len(statements) != 1:
        raise SqlSyntaxError(f"expected exactly one statement, found {len(statements)}")
    query = _Converter().query(statements[0])
    return replace(query, source=text)


class _Converter:
    def query(self, node: exp.Expression) -> LogicalQuery:
        if isinstance(node, exp.Subquery):
            node = node.this
        if isinstance(node, (exp.Union, exp.Intersect, exp.Except)):
            raise UnsupportedConstructError(node.key.upper())
        if not isinstance(node, exp.Select):
            raise UnsupportedConstructError(f"{node.key.upper()} statement")
        for key, name in _REJECTED_CLAUSES:
            if node.args.get(key):
                raise UnsupportedConstructError(name)
        if node.find(exp.Window):
            raise UnsupportedConstructError("window function")

        from_ = node.args.get("from") or node.args.get("from_")
        if from_ is None:
            raise UnsupportedConstructError("SELECT without FROM")
        items = [FromItem(self.table(from_.this))]
        items.extend(FromItem(self.table(t)) for t in from_.expressions)
        for join in node.args.get("joins") or []:
            items.append(self.join(join))

        select = tuple(self.select_item(e) for e in node.expressions)
        where = node.args.get("where")
        group = node.args.get("group")
        having = node.args.get("having")
        order = node.args.get("order")
        if group is not None and any(group.args.get(k) for k in ("rollup", "cube", "grouping_sets")):
            raise UnsupportedConstructError("ROLLUP / CUBE / GROUPING SETS")

        return LogicalQuery(
            select=select,
            from_=tuple(items),
            where=self.expr(where.this) if where is not None else None,
            group_by=tuple(self.expr(e) for e in group.expressions) if group is not None else (),
            having=self.expr(having.this) if having is not None else None,
            order_by=tuple(
                OrderItem(self.expr(o.this), bool(o.args.get("desc"))) for o in order.expressions
            ) if order is not None else (),
            limit=self.limit(node.args.get("limit")),
        )

    def table(self, node: exp.Expression) -> TableRef:
        if isinstance(node, exp.Subquery):
            raise UnsupportedConstructError("derived table in FROM")
        if not isinstance(node, exp.Table) or not isinstance(node.this, exp.Identifier):
            raise UnsupportedConstructError(f"FROM item {node.key.upper()}")
        return TableRef(name=node.name.lower(), alias=node.alias.lower() or None)

    def join(self, node: exp.Join) -> FromItem:
        side = (node.args.get("side") or "").upper()
        kind = (node.args.get("kind") or "").upper()
        if side in ("LEFT", "RIGHT", "FULL") or kind in ("OUTER", "FULL"):
            raise UnsupportedConstructError(f"{side or kind} OUTER JOIN")
        if kind in ("SEMI", "ANTI", "NATURAL") or node.args.get("method"):
            raise UnsupportedConstructError(f"{kind or node.args.get('method')} JOIN")
        if node.args.get("using"):
            raise UnsupportedConstructError("JOIN ... USING")
        on = node.args.get("on")
        return FromItem(self.table(node.this), self.expr(on) if on is not None else None)

    def select_item(self, node: exp.Expression) -> SelectItem:
        if isinstance(node, exp.Alias):
            return SelectItem(self.expr(node.this), node.alias.lower())
        return SelectItem(self.expr(node))

    def limit(self, node: Optional[exp.Expression]) -> Optional[int]:
        if node is None:
            return None
        value = node.args.get("expression") or node.this
        if not isinstance(value, exp.Literal) or value.is_string or not value.this.isdigit():
            raise UnsupportedConstructError("non-constant LIMIT")
        return int(value.this)

    # ---------------------------------------------------------------
    # expressions
    # ---------------------------------------------------------------

    def expr(self, node: exp.Expression) -> Expr:
        while isinstance(node, exp.Paren):
            node = node.this

        if isinstance(node, exp.Column):
            if isinstance(node.this, exp.Star):
                raise UnsupportedConstructError("qualified star")
            return ColumnRef(node.name.lower(), node.table.lower() or None)
        if isinstance(node, exp.Star):
            return Star()
        if isinstance(node, exp.Literal):
            return self.literal(node)
        if isinstance(node, exp.Boolean):
            return Literal(bool(node.this), T.BOOL)
        if isinstance(node, exp.Null):
            return Literal(None, T.NULL)
        if isinstance(node, exp.Neg):
            inner = self.expr(node.this)
            if isinstance(inner, Literal) and isinstance(inner.value, (int, float, Decimal)) \
                    and not isinstance(inner.value, bool):
                return Literal(-inner.value, inner.type)
            return Neg(inner)

        for cls, op in _ARITH.items():
            if type(node) is cls:
                return self.arith(op, node)
        for cls, op in _COMPARE.items():
            if type(node) is cls:
                return Compare(op, self.expr(node.this), self.expr(node.expression))

        if isinstance(node, exp.And):
            return And(tuple(self._flatten(node, exp.And)))
        if isinstance(node, exp.Or):
            return Or(tuple(self._flatten(node, exp.Or)))
        if isinstance(node, exp.Not):
            return self.negate(node.this)
        if isinstance(node, exp.Between):
            return Between(self.expr(node.this), self.expr(node.args["low"]), self.expr(node.args["high"]))
        if isinstance(node, exp.In):
            return self.in_(node)
        if isinstance(node, exp.Like):
            return self.like(node)
        if isinstance(node, exp.ILike):
            raise UnsupportedConstructError("ILIKE")
        if isinstance(node, exp.Is):
            if isinstance(node.expression, exp.Null):
                return IsNull(self.expr(node.this))
            raise UnsupportedConstructError("IS other than IS NULL")
        if isinstance(node, exp.Case):
            return self.case(node)
        if isinstance(node, exp.Extract):
            return self.extract(node)
        if isinstance(node, (exp.Cast, exp.TryCast)):
            return self.cast(node)
        if type(node).__name__ in ("Date", "TsOrDsToDate", "DateStrToDate", "StrToDate") \
                and isinstance(node.this, exp.Literal) and node.this.is_string:
            return self._date_literal(node.this.this)
        for cls, func in _AGGS.items():
            if isinstance(node, cls):
                return self.aggregate(func, node)

        if isinstance(node, exp.Subquery):
            raise UnsupportedConstructError("scalar subquery")
        if isinstance(node, exp.Exists):
            raise UnsupportedConstructError("EXISTS subquery")
        if isinstance(node, exp.Interval):
            raise UnsupportedConstructError("INTERVAL outside date-constant arithmetic")
        if isinstance(node, exp.Distinct):
            raise UnsupportedConstructError("DISTINCT")
        raise UnsupportedConstructError(node.key.upper())

    def _flatten(self, node: exp.Expression, cls) -> List[Expr]:
        while isinstance(node, exp.Paren):
            node = node.this
        if isinstance(node, cls):
            return self._flatten(node.this, cls) + self._flatten(node.expression, cls)
        return [self.expr(node)]

    def literal(self, node: exp.Literal) -> Literal:
        text = node.this
        if node.is_string:
            return Literal(text, T.VARCHAR)
        if "e" in text.lower():
            return Literal(float(text), T.DOUBLE)
        if "." in text:
            value = Decimal(text)
            scale = max(-value.as_tuple().exponent, 0)
            digits = len(value.as_tuple().digits)
            return Literal(value, T.decimal(max(digits, scale), scale))
        return Literal(int(text), T.INT64)

    def _date_literal(self, text: str) -> Literal:
        try:
            return Literal(date.fromisoformat(text.strip()), T.DATE)
        except ValueError:
            raise SqlSyntaxError(f"invalid date literal '{text}'") from None

    def arith(self, op: str, node: exp.Expression) -> Expr:
        right_node = node.expression
        while isinstance(right_node, exp.Paren):
            right_node = right_node.this
        if isinstance(right_node, exp.Interval):
            if op not in ("+", "-"):
                raise UnsupportedConstructError(f"INTERVAL with '{op}'")
            left = self.expr(node.this)
            if not (isinstance(left, Literal) and isinstance(left.value, date)):
                raise UnsupportedConstructError("INTERVAL on a non-constant date")
            delta = self.interval(right_node)
            return Literal(left.value + delta if op == "+" else left.value - delta, T.DATE)
        return Arith(op, self.expr(node.this), self.expr(node.expression))

    def interval(self, node: exp.Interval) -> relativedelta:
        value = node.this
        unit = node.args.get("unit")
        text = value.this if isinstance(value, exp.Literal) else None
        if text is None:
            raise UnsupportedConstructError("non-constant INTERVAL")
        unit_name = unit.name if unit is not None else None
        parts = str(text).strip().split()
        if unit_name is None and len(parts) == 2:
            text, unit_name = parts
        try:
            amount = int(str(text).strip())
        except ValueError:
            raise SqlSyntaxError(f"invalid interval amount '{text}'") from None
        unit_name = (unit_name or "").lower().rstrip("s")
        if unit_name == "year":
            return relativedelta(years=amount)
        if unit_name == "month":
            return relativedelta(months=amount)
        if unit_name == "day":
            return relativedelta(days=amount)
        raise UnsupportedConstructError(f"INTERVAL unit '{unit_name}'")

    def negate(self, inner: exp.Expression) -> Expr:
        while isinstance(inner, exp.Paren):
            inner = inner.this
        converted = self.expr(inner)
        if isinstance(converted, (Like, Between, InList, InSubquery, IsNull)) \
                and not converted.negated:
            return replace(converted, negated=True)
        return Not(converted)

    def in_(self, node: exp.In) -> Expr:
        query = node.args.get("query")
        if query is not None:
            return InSubquery(self.expr(node.this), self.query(query))
        if node.args.get("unnest") or node.args.get("field"):
            raise UnsupportedConstructError("IN UNNEST")
        items = node.expressions
        if len(items) == 1 and isinstance(items[0], (exp.Subquery, exp.Select)):
            return InSubquery(self.expr(node.this), self.query(items[0]))
        return InList(self.expr(node.this), tuple(self.expr(e) for e in items))

    def like(self, node: exp.Like) -> Like:
        pattern = node.expression
        if not (isinstance(pattern, exp.Literal) and pattern.is_string):
            raise UnsupportedConstructError("LIKE with a non-literal pattern")
        return Like(self.expr(node.this), pattern.this)

    def case(self, node: exp.Case) -> Case:
        operand = node.this
        whens = []
        for branch in node.args.get("ifs") or []:
            cond = self.expr(branch.this)
            if operand is not None:
                cond = Compare("=", self.expr(operand), cond)
            whens.append((cond, self.expr(branch.args["true"])))
        default = node.args.get("default")
        return Case(tuple(whens), self.expr(default) if default is not None else None)

    def extract(self, node: exp.Extract) -> Extract:
        part = node.this.name.lower() if node.this is not None else ""
        if part not in _EXTRACT_PARTS:
            raise UnsupportedConstructError(f"EXTRACT({part.upper()})")
        return Extract(part, self.expr(node.expression))

    def cast(self, node: exp.Expression) -> Expr:
        target = node.args["to"]
        name = target.this.name if hasattr(target.this, "name") else str(target.this)
        kind = _CAST_TYPES.get(name.upper())
        if kind is None:
            raise UnsupportedConstructError(f"CAST to {name}")
        operand = node.this
        if kind == T.TypeKind.DATE and isinstance(operand, exp.Literal) and operand.is_string:
            return self._date_literal(operand.this)
        if kind == T.TypeKind.DECIMAL:
            params = [int(p.name) for p in target.expressions]
            precision = params[0] if params else 18
            scale = params[1] if len(params) > 1 else 0
            sql_type = T.decimal(precision, scale)
        else:
            sql_type = T.SqlType(kind)
        return Cast(self.expr(operand), sql_type)

    def aggregate(self, func: str, node: exp.Expression) -> AggCall:
        arg = node.this
        if isinstance(arg, exp.Distinct):
            raise UnsupportedConstructError(f"{func.upper()}(DISTINCT ...)")
        if arg is None or isinstance(arg, exp.Star):
            if func != "count":
                raise UnsupportedConstructError(f"{func.upper()}(*)")
            return AggCall("count", None)
        return AggCall(func, self.expr(arg))
