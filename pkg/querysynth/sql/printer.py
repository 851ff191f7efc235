"""
LogicalQuery -> SQL text. Binary operators are always parenthesized, so printing
and re-parsing reproduces the same AST.
"""
from datetime import date
from decimal import Decimal

from querysynth.models.catalog import TypeKind
from querysynth.sql.ast import (
    AggCall, And, Arith, Between, Case, Cast, ColumnRef, Compare, Expr, Extract, InList,
    InSubquery, IsNull, Like, Literal, LogicalQuery, Neg, Not, Or, Star,
)


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


def literal_sql(value) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, date):
        return f"DATE '{value.isoformat()}'"
    if isinstance(value, Decimal):
        return format(value, "f")
    if isinstance(value, float):
        text = repr(value)
        return text if "e" in text else text + "e0"
    if isinstance(value, int):
        return str(value)
    return _quote(str(value))


def _type_sql(t) -> str:
    if t.kind == TypeKind.DECIMAL:
        return f"DECIMAL({t.precision}, {t.scale})"
    return {TypeKind.DOUBLE: "DOUBLE", TypeKind.INT64: "BIGINT", TypeKind.DATE: "DATE"}.get(t.kind, "VARCHAR")


def expr_sql(e: Expr) -> str:
    if isinstance(e, Literal):
        return literal_sql(e.value)
    if isinstance(e, ColumnRef):
        return e.qualified
    if isinstance(e, Star):
        return "*"
    if isinstance(e, Arith):
        return f"({expr_sql(e.left)} {e.op} {expr_sql(e.right)})"
    if isinstance(e, Neg):
        return f"(-{expr_sql(e.operand)})"
    if isinstance(e, Compare):
        return f"({expr_sql(e.left)} {e.op} {expr_sql(e.right)})"
    if isinstance(e, Between):
        neg = "NOT " if e.negated else ""
        return f"({expr_sql(e.operand)} {neg}BETWEEN {expr_sql(e.low)} AND {expr_sql(e.high)})"
    if isinstance(e, InList):
        neg = "NOT " if e.negated else ""
        return f"({expr_sql(e.operand)} {neg}IN ({', '.join(expr_sql(i) for i in e.items)}))"
    if isinstance(e, InSubquery):
        neg = "NOT " if e.negated else ""
        return f"({expr_sql(e.operand)} {neg}IN ({to_sql(e.query)}))"
    if isinstance(e, Like):
        neg = "NOT " if e.negated else ""
        return f"({expr_sql(e.operand)} {neg}LIKE {_quote(e.pattern)})"
    if isinstance(e, IsNull):
        return f"({expr_sql(e.operand)} IS {'NOT ' if e.negated else ''}NULL)"
    if isinstance(e, And):
        return "(" + " AND ".join(expr_sql(i) for i in e.items) + ")"
    if isinstance(e, Or):
        return "(" + " OR ".join(expr_sql(i) for i in e.items) + ")"
    if isinstance(e, Not):
        return f"(NOT {expr_sql(e.operand)})"
    if isinstance(e, Case):
        whens = " ".join(f"WHEN {expr_sql(c)} THEN {expr_sql(v)}" for c, v in e.whens)
        default = f" ELSE {expr_sql(e.default)}" if e.default is not None else ""
        return f"CASE {whens}{default} END"
    if isinstance(e, Extract):
        return f"EXTRACT({e.part.upper()} FROM {expr_sql(e.operand)})"
    if isinstance(e, Cast):
        return f"CAST({expr_sql(e.operand)} AS {_type_sql(e.target)})"
    if isinstance(e, AggCall):
        return f"{e.func.upper()}({'*' if e.arg is None else expr_sql(e.arg)})"
    raise TypeError(f"cannot print {type(e).__name__}")


def to_sql(q: LogicalQuery, pretty: bool = False) -> str:
    sep = "\n" if pretty else " "
    select = ", ".join(
        expr_sql(item.expr) + (f" AS {item.alias}" if item.alias else "") for item in q.select
    )
    parts = [f"SELECT {select}"]
    source = []
    for i, item in enumerate(q.from_):
        ref = item.table.name + (f" AS {item.table.alias}" if item.table.alias else "")
        if i == 0:
            source.append(ref)
        elif item.on is not None:
            source.append(f"JOIN {ref} ON {expr_sql(item.on)}")
        else:
            source.append(f"CROSS JOIN {ref}")
    parts.append("FROM " + " ".join(source))
    if q.where is not None:
        parts.append(f"WHERE {expr_sql(q.where)}")
    if q.group_by:
        parts.append("GROUP BY " + ", ".join(expr_sql(g) for g in q.group_by))
    if q.having is not None:
        parts.append(f"HAVING {expr_sql(q.having)}")
    if q.order_by:
        parts.append("ORDER BY " + ", ".join(
            expr_sql(o.expr) + (" DESC" if o.desc else "") for o in q.order_by
        ))
    if q.limit is not None:
        parts.append(f"LIMIT {q.limit}")
    return sep.join(parts)
