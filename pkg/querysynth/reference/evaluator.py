"""
Row-at-a-time expression evaluation for the reference interpreter.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from querysynth.errors import QuerySynthError
from querysynth.sql import scalar
from querysynth.sql.ast import (
    AggCall, And, Arith, Between, Case, Cast, ColumnRef, Compare, Expr, Extract, InList,
    InSubquery, IsNull, Like, Literal, Neg, Not, Or,
)


@dataclass
class SubqueryKeys:
    values: frozenset
    has_null: bool = False


@dataclass
class RowContext:
    values: Mapping[Tuple[str, str], Any]
    aggregates: Dict[AggCall, Any] = field(default_factory=dict)
    keys: Dict[Expr, Any] = field(default_factory=dict)
    subqueries: Dict[int, SubqueryKeys] = field(default_factory=dict)


def evaluate_scalar(expr: Expr, values: Mapping[Tuple[str, str], Any]) -> Any:
    return evaluate(expr, RowContext(values))


def evaluate(e: Expr, ctx: RowContext) -> Any:
    if ctx.keys and e in ctx.keys:
        return ctx.keys[e]
    if isinstance(e, Literal):
        return e.value
    if isinstance(e, ColumnRef):
        return ctx.values[(e.table, e.name)]
    if isinstance(e, AggCall):
        return ctx.aggregates[e]
    if isinstance(e, Arith):
        return scalar.arith(e.op, evaluate(e.left, ctx), evaluate(e.right, ctx), e.type)
    if isinstance(e, Neg):
        return scalar.negate(evaluate(e.operand, ctx), e.type)
    if isinstance(e, Compare):
        return scalar.compare(e.op, evaluate(e.left, ctx), evaluate(e.right, ctx))
    if isinstance(e, Between):
        v = evaluate(e.operand, ctx)
        out = scalar.and3((scalar.compare(">=", v, evaluate(e.low, ctx)),
                           scalar.compare("<=", v, evaluate(e.high, ctx))))
        return scalar.not3(out) if e.negated else out
    if isinstance(e, InList):
        out = _in_list(evaluate(e.operand, ctx), [evaluate(i, ctx) for i in e.items])
        return scalar.not3(out) if e.negated else out
    if isinstance(e, InSubquery):
        out = _in_keys(evaluate(e.operand, ctx), ctx.subqueries[e.ordinal])
        return scalar.not3(out) if e.negated else out
    if isinstance(e, Like):
        out = scalar.like(evaluate(e.operand, ctx), e.pattern)
        return scalar.not3(out) if e.negated else out
    if isinstance(e, IsNull):
        isnull = evaluate(e.operand, ctx) is None
        return not isnull if e.negated else isnull
    if isinstance(e, And):
        return scalar.and3(evaluate(i, ctx) for i in e.items)
    if isinstance(e, Or):
        return scalar.or3(evaluate(i, ctx) for i in e.items)
    if isinstance(e, Not):
        return scalar.not3(evaluate(e.operand, ctx))
    if isinstance(e, Case):
        for cond, value in e.whens:
            if evaluate(cond, ctx) is True:
                return scalar.coerce_to_type(evaluate(value, ctx), e.type)
        if e.default is None:
            return None
        return scalar.coerce_to_type(evaluate(e.default, ctx), e.type)
    if isinstance(e, Extract):
        return scalar.extract(e.part, evaluate(e.operand, ctx))
    if isinstance(e, Cast):
        return scalar.cast(evaluate(e.operand, ctx), e.target)
    raise QuerySynthError(f"reference evaluator cannot handle {type(e).__name__}")


def _in_list(v: Any, items) -> Optional[bool]:
    if v is None:
        return None if items else False
    unknown = False
    for item in items:
        hit = scalar.compare("=", v, item)
        if hit:
            return True
        if hit is None:
            unknown = True
    return None if unknown else False


def _in_keys(v: Any, keys: SubqueryKeys) -> Optional[bool]:
    if not keys.values and not keys.has_null:
        return False
    if v is None:
        return None
    if v in keys.values:
        return True
    return None if keys.has_null else False


def is_true(value: Any) -> bool:
    return value is True
