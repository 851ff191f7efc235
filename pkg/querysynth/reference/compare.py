"""
Result comparison under the equivalence rules used for plan validation.

Unordered results compare as multisets. Ordered results compare position by
position, except that runs of rows with equal ORDER BY keys compare as multisets.
When LIMIT cut through the last run, any rows carrying that run's keys match.
Exact types (integers, decimals, dates, strings) must be equal; doubles match
within a relative tolerance or an absolute one near zero.
"""
import math
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from querysynth.models.catalog import TypeKind
from querysynth.reference.resultset import ResultSet, canonical_row_key, null_last_key


# leftover pairs tried one by one after the sorted merge
_GREEDY_PAIRS = 4_000_000


class Tolerances(BaseModel):
    relative: float = 1e-9
    absolute: float = 1e-12


class CellDiff(BaseModel):
    row: int
    column: str
    expected: Any = None
    actual: Any = None


class ComparisonReport(BaseModel):
    verdict: str  # match | mismatch
    message: str = ""
    first_difference: Optional[CellDiff] = None
    missing_rows: int = 0
    extra_rows: int = 0

    @property
    def matched(self) -> bool:
        return self.verdict == "match"


def cells_equal(a: Any, b: Any, is_double: bool, tol: Tolerances) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if is_double:
        fa, fb = float(a), float(b)
        if math.isnan(fa) or math.isnan(fb):
            return math.isnan(fa) and math.isnan(fb)
        return math.isclose(fa, fb, rel_tol=tol.relative, abs_tol=tol.absolute)
    return a == b


def _type_family(t) -> str:
    if t is None or t.kind is None:
        return "null"
    if t.kind in (TypeKind.VARCHAR, TypeKind.CHAR):
        return "string"
    return t.kind.value


@dataclass
class _Context:
    columns: List[str]
    doubles: List[bool]
    tol: Tolerances
    first: Optional[CellDiff] = None
    missing: int = 0
    extra: int = 0

    def row_diff(self, e: Sequence, a: Sequence) -> Optional[Tuple[int, Any, Any]]:
        for c, (x, y) in enumerate(zip(e, a)):
            if not cells_equal(x, y, self.doubles[c], self.tol):
                return c, x, y
        return None

    def note(self, row: int, diff: Tuple[int, Any, Any]) -> None:
        if self.first is None:
            c, x, y = diff
            self.first = CellDiff(row=row, column=self.columns[c], expected=_show(x), actual=_show(y))


def _show(v: Any) -> Any:
    if v is None or isinstance(v, (bool, int, float, str)):
        return v
    return str(v)


def compare_results(expected: ResultSet, actual: ResultSet,
                    tolerances: Optional[Tolerances] = None) -> ComparisonReport:
    tol = tolerances or Tolerances()
    if len(expected.columns) != len(actual.columns):
        return ComparisonReport(
            verdict="mismatch",
            message=f"structural: {len(expected.columns)} columns expected, {len(actual.columns)} found",
        )
    for name, te, ta in zip(expected.columns, expected.types, actual.types):
        fe, fa = _type_family(te), _type_family(ta)
        if fe != fa and "null" not in (fe, fa):
            return ComparisonReport(verdict="mismatch", message=f"structural: column {name} is {fa}, expected {fe}")

    ctx = _Context(
        columns=list(expected.columns),
        doubles=[t is not None and t.kind == TypeKind.DOUBLE for t in expected.types],
        tol=tol,
    )
    if expected.ordered:
        _compare_ordered(expected, actual, ctx)
    else:
        _compare_multiset(expected.rows, actual.rows, 0, ctx)

    if ctx.first is None and not ctx.missing and not ctx.extra:
        return ComparisonReport(verdict="match")
    parts = []
    if ctx.missing:
        parts.append(f"{ctx.missing} missing row(s)")
    if ctx.extra:
        parts.append(f"{ctx.extra} extra row(s)")
    if ctx.first is not None:
        parts.append(f"first difference at row {ctx.first.row}, column {ctx.first.column}")
    return ComparisonReport(
        verdict="mismatch", message="; ".join(parts), first_difference=ctx.first,
        missing_rows=ctx.missing, extra_rows=ctx.extra,
    )


def _compare_multiset(expected: Sequence[tuple], actual: Sequence[tuple], offset: int, ctx: _Context) -> None:
    """Pair rows within groups of equal exact-typed cells; doubles inside a group pair within tolerance."""
    exact = [c for c, is_double in enumerate(ctx.doubles) if not is_double]

    def group(row: Sequence) -> tuple:
        return tuple(null_last_key(row[c]) for c in exact)

    def sort_key(row: Sequence) -> tuple:
        return group(row), canonical_row_key(row)

    exp_sorted = sorted(expected, key=sort_key)
    act_sorted = sorted(actual, key=sort_key)
    left_e: List[int] = []
    left_a: List[int] = []
    i = j = 0
    while i < len(exp_sorted) or j < len(act_sorted):
        ge = group(exp_sorted[i]) if i < len(exp_sorted) else None
        ga = group(act_sorted[j]) if j < len(act_sorted) else None
        i2, j2 = i, j
        if ge is not None and (ga is None or ge <= ga):
            while i2 < len(exp_sorted) and group(exp_sorted[i2]) == ge:
                i2 += 1
        if ga is not None and (ge is None or ga <= ge):
            while j2 < len(act_sorted) and group(act_sorted[j2]) == ga:
                j2 += 1
        e_rest, a_rest = _match_group(exp_sorted, range(i, i2), act_sorted, range(j, j2), ctx)
        left_e += e_rest
        left_a += a_rest
        i, j = i2, j2

    ctx.missing += len(left_e)
    ctx.extra += len(left_a)
    if ctx.first is None and left_e:
        row = exp_sorted[left_e[0]]
        if left_a:
            ctx.note(offset + left_e[0], ctx.row_diff(row, act_sorted[left_a[0]]) or (0, row[0], None))
        elif ctx.columns:
            ctx.first = CellDiff(row=offset + left_e[0], column=ctx.columns[0], expected=_show(row[0]))
    elif ctx.first is None and left_a and ctx.columns:
        ctx.first = CellDiff(row=offset + len(exp_sorted), column=ctx.columns[0],
                             actual=_show(act_sorted[left_a[0]][0]))


def _match_group(exp: Sequence[tuple], e_idx: range, act: Sequence[tuple], a_idx: range,
                 ctx: _Context) -> Tuple[List[int], List[int]]:
    """Unmatched positions on each side after a sorted merge and a greedy pass over the leftovers."""
    left_e: List[int] = []
    left_a: List[int] = []
    i, j = e_idx.start, a_idx.start
    while i < e_idx.stop and j < a_idx.stop:
        if ctx.row_diff(exp[i], act[j]) is None:
            i += 1
            j += 1
        elif canonical_row_key(exp[i]) < canonical_row_key(act[j]):
            left_e.append(i)
            i += 1
        else:
            left_a.append(j)
            j += 1
    left_e += range(i, e_idx.stop)
    left_a += range(j, a_idx.stop)
    if not any(ctx.doubles) or not left_e or not left_a or len(left_e) * len(left_a) > _GREEDY_PAIRS:
        return left_e, left_a

    unmatched = []
    for ei in left_e:
        hit = next((k for k, aj in enumerate(left_a) if ctx.row_diff(exp[ei], act[aj]) is None), None)
        if hit is None:
            unmatched.append(ei)
        else:
            left_a.pop(hit)
    return unmatched, left_a


def _tie_keys(result: ResultSet) -> Optional[List[tuple]]:
    if result.sort_keys is not None and len(result.sort_keys) == len(result.rows):
        return result.sort_keys
    if result.order_columns:
        return [tuple(row[c] for c in result.order_columns) for row in result.rows]
    return None


def _compare_ordered(expected: ResultSet, actual: ResultSet, ctx: _Context) -> None:
    keys = _tie_keys(expected)
    if len(expected.rows) != len(actual.rows):
        _compare_multiset(expected.rows, actual.rows, 0, ctx)
        return
    if keys is None:
        for r, (e, a) in enumerate(zip(expected.rows, actual.rows)):
            diff = ctx.row_diff(e, a)
            if diff is not None:
                ctx.note(r, diff)
                return
        return

    start = 0
    n = len(expected.rows)
    while start < n:
        end = start + 1
        while end < n and keys[end] == keys[start]:
            end += 1
        if end == n and expected.cut_in_tie and _same_keys(keys, _tie_keys(actual), start, end):
            # LIMIT kept an arbitrary subset of this tie group; only its keys are determined
            return
        before = (ctx.first, ctx.missing, ctx.extra)
        _compare_multiset(expected.rows[start:end], actual.rows[start:end], start, ctx)
        if (ctx.first, ctx.missing, ctx.extra) != before:
            return
        start = end


def _same_keys(expected: List[tuple], actual: Optional[List[tuple]], start: int, end: int) -> bool:
    return actual is not None and len(actual) == len(expected) and actual[start:end] == expected[start:end]
