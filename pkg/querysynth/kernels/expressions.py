"""
Vectorized expression evaluation over a Frame.

Mirrors sql/scalar.py on whole columns: three-valued logic through a nulls mask,
decimal arithmetic on unscaled int64 with a 64-bit range check, `/` in double with
NULL for a zero divisor. Predicates on a dictionary column against constants are
evaluated once per dictionary entry and gathered through the codes.
"""
from datetime import date
from decimal import Decimal
from typing import Any, Iterable, List, Optional

import numpy as np

from querysynth.errors import KernelContractError
from querysynth.models.catalog import TypeKind
from querysynth.sql import scalar
from querysynth.sql import types as T
from querysynth.sql.ast import (
    AggCall, And, Arith, Between, Case, Cast, ColumnRef, Compare, Expr, Extract, InList,
    InSubquery, IsNull, Like, Literal, Neg, Not, Or,
)
from querysynth.storage.encoding import EPOCH
from querysynth.kernels.vectors import (
    Frame, Vec, as_exact, as_float, check_overflow, coerce, constant, downscale_half_away,
    merge_nulls, rescale, round_half_away,
)

_NP_COMPARE = {
    "=": np.equal, "<>": np.not_equal, "<": np.less,
    "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
}


def evaluate(e: Expr, frame: Frame) -> Vec:
    if frame.precomputed and e in frame.precomputed:
        return frame.precomputed[e]
    n = frame.length
    if isinstance(e, Literal):
        return constant(e.value, e.type or T.NULL, n)
    if isinstance(e, ColumnRef):
        return frame.column(e)
    if isinstance(e, AggCall):
        raise KernelContractError(f"aggregate {e.func} evaluated outside a grouped frame")
    if isinstance(e, Arith):
        return arith(e.op, evaluate(e.left, frame), evaluate(e.right, frame), e.type)
    if isinstance(e, Neg):
        return negate(evaluate(e.operand, frame), e.type)
    if isinstance(e, (Compare, Between, InList, Like)):
        return _predicate(e, frame)
    if isinstance(e, InSubquery):
        out = in_keys(evaluate(e.operand, frame), frame.subqueries[e.ordinal])
        return not3(out) if e.negated else out
    if isinstance(e, IsNull):
        mask = evaluate(e.operand, frame).null_mask()
        return Vec(~mask if e.negated else mask.copy(), T.BOOL)
    if isinstance(e, And):
        return and3([evaluate(i, frame) for i in e.items])
    if isinstance(e, Or):
        return or3([evaluate(i, frame) for i in e.items])
    if isinstance(e, Not):
        return not3(evaluate(e.operand, frame))
    if isinstance(e, Case):
        return _case(e, frame)
    if isinstance(e, Extract):
        return extract(e.part, evaluate(e.operand, frame))
    if isinstance(e, Cast):
        return cast(evaluate(e.operand, frame), e.target)
    raise KernelContractError(f"no vectorized form for {type(e).__name__}")


def predicate_mask(e: Expr, frame: Frame) -> np.ndarray:
    """Rows where the predicate is TRUE (UNKNOWN counts as false)."""
    v = evaluate(e, frame)
    if v.type.is_null:
        return np.zeros(frame.length, dtype=bool)
    mask = v.data.astype(bool, copy=False)
    if v.nulls is not None:
        mask = mask & ~v.nulls
    return mask


# ===================================================================
# ARITHMETIC
# ===================================================================

def arith(op: str, left: Vec, right: Vec, result: T.SqlType) -> Vec:
    nulls = merge_nulls(left.nulls, right.nulls)
    n = len(left)
    if result.is_null or left.type.is_null or right.type.is_null:
        return constant(None, result if not result.is_null else T.NULL, n)
    if op == "/":
        a, b = as_float(left), as_float(right)
        zero = b == 0.0
        safe = np.where(zero, 1.0, b)
        return Vec(a / safe, T.DOUBLE, merge_nulls(nulls, zero))
    if result.kind == TypeKind.DOUBLE:
        a, b = as_float(left), as_float(right)
        out = a + b if op == "+" else a - b if op == "-" else a * b
        return Vec(out, T.DOUBLE, nulls)

    if op == "*":
        a = left.data.astype(np.int64, copy=False)
        b = right.data.astype(np.int64, copy=False)
        check_overflow(a.astype(np.float64) * b.astype(np.float64), nulls)
    else:
        scale = result.exact_scale
        a, b = as_exact(left, scale), as_exact(right, scale)
        check_overflow(a.astype(np.float64) + (b if op == "+" else -b).astype(np.float64), nulls)
    if nulls is not None:
        a, b = np.where(nulls, 0, a), np.where(nulls, 0, b)
    out = a + b if op == "+" else a - b if op == "-" else a * b
    return Vec(out, result, nulls)


def negate(v: Vec, result: T.SqlType) -> Vec:
    if v.type.is_null:
        return v
    if v.type.is_exact:
        check_overflow(-v.data.astype(np.float64), v.nulls)
    return Vec(-v.data, result or v.type, v.nulls)


# ===================================================================
# COMPARISON
# ===================================================================

def compare(op: str, left: Vec, right: Vec) -> Vec:
    nulls = merge_nulls(left.nulls, right.nulls)
    if left.type.is_null or right.type.is_null:
        return constant(None, T.BOOL, len(left))
    fn = _NP_COMPARE[op]
    lt, rt = left.type, right.type
    if lt.is_string or rt.is_string:
        if left.is_dictionary and right.is_dictionary and left.dictionary is right.dictionary and op in ("=", "<>"):
            out = fn(left.data, right.data)
        else:
            out = fn(left.strings(), right.strings()).astype(bool)
    elif lt.kind == TypeKind.DOUBLE or rt.kind == TypeKind.DOUBLE:
        out = fn(as_float(left), as_float(right))
    elif lt.is_exact and rt.is_exact:
        scale = max(lt.exact_scale, rt.exact_scale)
        out = fn(as_exact(left, scale), as_exact(right, scale))
    else:
        out = fn(left.data, right.data)
    if nulls is not None:
        out = out & ~nulls
    return Vec(np.asarray(out, dtype=bool), T.BOOL, nulls)


def _predicate(e: Expr, frame: Frame) -> Vec:
    operand_expr = e.left if isinstance(e, Compare) else e.operand
    others = _constant_operands(e)
    if others is not None:
        operand = evaluate(operand_expr, frame)
        if operand.is_dictionary and len(operand.dictionary):
            # one evaluation per distinct string, then gather by code
            entries = Vec(operand.dictionary, operand.type)
            out = _predicate_on(e, entries, len(entries))
            data = out.data[operand.data]
            nulls = merge_nulls(operand.nulls, None if out.nulls is None else out.nulls[operand.data])
            if nulls is not None:
                data = data & ~nulls
            return Vec(data, T.BOOL, nulls)
        return _predicate_on(e, operand, len(operand))
    if isinstance(e, Compare):
        return compare(e.op, evaluate(e.left, frame), evaluate(e.right, frame))
    operand = evaluate(e.operand, frame)
    if isinstance(e, Between):
        out = and3([compare(">=", operand, evaluate(e.low, frame)),
                    compare("<=", operand, evaluate(e.high, frame))])
    else:
        out = or3([compare("=", operand, evaluate(i, frame)) for i in e.items])
    return not3(out) if e.negated else out


def _constant_operands(e: Expr) -> Optional[List[Literal]]:
    """Literal operands when everything but the tested operand is constant."""
    if isinstance(e, Compare):
        return [e.right] if isinstance(e.right, Literal) else None
    if isinstance(e, Between):
        return [e.low, e.high] if isinstance(e.low, Literal) and isinstance(e.high, Literal) else None
    if isinstance(e, InList):
        return list(e.items) if all(isinstance(i, Literal) for i in e.items) else None
    if isinstance(e, Like):
        return []
    return None


def _predicate_on(e: Expr, operand: Vec, n: int) -> Vec:
    def lit(x: Literal) -> Vec:
        return constant(x.value, x.type or T.NULL, n)

    if isinstance(e, Compare):
        return compare(e.op, operand, lit(e.right))
    if isinstance(e, Between):
        out = and3([compare(">=", operand, lit(e.low)), compare("<=", operand, lit(e.high))])
    elif isinstance(e, InList):
        out = _in_literals(operand, [i.value for i in e.items], n)
    else:
        out = like(operand, e.pattern)
    return not3(out) if e.negated else out


def _in_literals(operand: Vec, values: List[Any], n: int) -> Vec:
    """IN over constant items: TRUE on a hit, UNKNOWN when a NULL item could match."""
    has_null = any(v is None for v in values)
    present = [v for v in values if v is not None]
    if not present:
        hit = np.zeros(n, dtype=bool)
    else:
        hit = _isin(operand, present)
    nulls = operand.null_mask() | (~hit & has_null) if (operand.nulls is not None or has_null) else None
    data = hit if nulls is None else hit & ~nulls
    return Vec(data, T.BOOL, nulls)


def _isin(operand: Vec, values: Iterable[Any]) -> np.ndarray:
    t = operand.type
    if t.is_string:
        return np.isin(operand.strings().astype(str), np.array([str(v) for v in values], dtype=str))
    if t.kind == TypeKind.DOUBLE:
        return np.isin(operand.data, np.array([float(v) for v in values], dtype=np.float64))
    if t.kind == TypeKind.DATE:
        days = [(v - EPOCH).days for v in values if isinstance(v, date)]
        return np.isin(operand.data, np.array(days, dtype=np.int64))
    if t.kind == TypeKind.BOOL:
        return np.isin(operand.data, np.array([bool(v) for v in values], dtype=bool))
    if any(isinstance(v, float) for v in values):
        return np.isin(as_float(operand), np.array([float(v) for v in values], dtype=np.float64))
    scale = t.exact_scale
    keys = []
    for v in values:
        scaled = Decimal(v).scaleb(scale)
        if scaled == scaled.to_integral_value() and abs(scaled) < 2 ** 63:
            keys.append(int(scaled))
    return np.isin(operand.data, np.array(keys, dtype=np.int64))


def in_keys(operand: Vec, keys: Any) -> Vec:
    """IN (subquery) against materialized keys (values, has_null)."""
    n = len(operand)
    if not keys.values and not keys.has_null:
        return Vec(np.zeros(n, dtype=bool), T.BOOL)
    if operand.type.is_null:
        return constant(None, T.BOOL, n)
    hit = _isin(operand, keys.values) if keys.values else np.zeros(n, dtype=bool)
    nulls = operand.null_mask().copy()
    if keys.has_null:
        nulls |= ~hit
    data = hit & ~nulls
    return Vec(data, T.BOOL, nulls if nulls.any() else None)


def like(operand: Vec, pattern: str) -> Vec:
    match = scalar.like_matcher(pattern)
    strings = operand.strings()
    data = np.fromiter((match(s) for s in strings), dtype=bool, count=len(strings))
    if operand.nulls is not None:
        data &= ~operand.nulls
    return Vec(data, T.BOOL, operand.nulls)


# ===================================================================
# THREE-VALUED LOGIC
# ===================================================================

def _truth(v: Vec):
    if v.type.is_null:
        n = len(v)
        return np.zeros(n, dtype=bool), np.ones(n, dtype=bool)
    nulls = v.null_mask()
    return v.data.astype(bool, copy=False) & ~nulls, nulls


def and3(items: List[Vec]) -> Vec:
    n = len(items[0])
    any_false = np.zeros(n, dtype=bool)
    any_null = np.zeros(n, dtype=bool)
    for item in items:
        true, nulls = _truth(item)
        any_false |= ~true & ~nulls
        any_null |= nulls
    nulls = any_null & ~any_false
    return Vec(~any_false & ~any_null, T.BOOL, nulls if nulls.any() else None)


def or3(items: List[Vec]) -> Vec:
    n = len(items[0])
    any_true = np.zeros(n, dtype=bool)
    any_null = np.zeros(n, dtype=bool)
    for item in items:
        true, nulls = _truth(item)
        any_true |= true
        any_null |= nulls
    nulls = any_null & ~any_true
    return Vec(any_true, T.BOOL, nulls if nulls.any() else None)


def not3(v: Vec) -> Vec:
    true, nulls = _truth(v)
    return Vec(~true & ~nulls, T.BOOL, v.nulls if not v.type.is_null else nulls)


# ===================================================================
# CASE / EXTRACT / CAST
# ===================================================================

def _case(e: Case, frame: Frame) -> Vec:
    n = frame.length
    target = e.type or T.NULL
    if target.is_null:
        return constant(None, T.NULL, n)
    out = coerce(evaluate(e.default, frame), target) if e.default is not None else constant(None, target, n)
    data = out.strings().copy() if target.is_string else out.data.copy()
    nulls = out.null_mask().copy()
    decided = np.zeros(n, dtype=bool)
    for cond, value in e.whens:
        hit = predicate_mask(cond, frame) & ~decided
        if not hit.any():
            continue
        branch = coerce(evaluate(value, frame), target)
        src = branch.strings() if target.is_string else branch.data
        data[hit] = src[hit]
        nulls[hit] = branch.null_mask()[hit]
        decided |= hit
    return Vec(data, target, nulls if nulls.any() else None)


def extract(part: str, v: Vec) -> Vec:
    days = v.data.astype("datetime64[D]")
    if part == "year":
        out = days.astype("datetime64[Y]").astype(np.int64) + 1970
    elif part == "month":
        out = days.astype("datetime64[M]").astype(np.int64) % 12 + 1
    else:
        out = (days - days.astype("datetime64[M]").astype("datetime64[D]")).astype(np.int64) + 1
    return Vec(out.astype(np.int64), T.INT64, v.nulls)


def cast(v: Vec, target: T.SqlType) -> Vec:
    if v.type.is_null:
        return constant(None, target, len(v))
    kind = target.kind
    src = v.type
    if kind == TypeKind.DOUBLE:
        return Vec(as_float(v), target, v.nulls)
    if kind in (TypeKind.DECIMAL, TypeKind.INT64):
        scale = target.exact_scale
        if src.kind == TypeKind.DOUBLE:
            x = np.where(v.null_mask(), 0.0, v.data)
            return Vec(round_half_away(x, scale), target, v.nulls)
        have = src.exact_scale
        if scale >= have:
            return Vec(rescale(v.data.astype(np.int64), have, scale), target, v.nulls)
        return Vec(downscale_half_away(v.data.astype(np.int64), 10 ** (have - scale)), target, v.nulls)
    if kind == TypeKind.DATE:
        if src.kind == TypeKind.DATE:
            return Vec(v.data, target, v.nulls)
        strings = v.strings()
        text = np.where(v.null_mask(), "1970-01-01", strings.astype(str))
        days = text.astype("datetime64[D]").astype(np.int64)
        return Vec(days, target, v.nulls)
    if target.is_string:
        return Vec(v.strings(), target, v.nulls)
    return Vec(v.data, target, v.nulls, v.dictionary)

