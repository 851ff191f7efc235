"""
SQL types after binding, and the arithmetic/comparison typing rules.

Decimal arithmetic carries a result scale: +/- take max(s1, s2), * takes s1 + s2.
Nothing rescales implicitly; only CAST or output formatting divides by the factor.
"""
from dataclasses import dataclass
from typing import Optional

from querysynth.errors import BindingError
from querysynth.models.catalog import ColumnSpec, TypeKind

MAX_PRECISION = 38


@dataclass(frozen=True)
class SqlType:
    kind: Optional[TypeKind]  # None = NULL literal (unknown type)
    scale: int = 0
    precision: int = 18
    length: Optional[int] = None

    @property
    def is_null(self) -> bool:
        return self.kind is None

    @property
    def is_numeric(self) -> bool:
        return self.kind in (TypeKind.INT64, TypeKind.DECIMAL, TypeKind.DOUBLE)

    @property
    def is_exact(self) -> bool:
        return self.kind in (TypeKind.INT64, TypeKind.DECIMAL)

    @property
    def is_string(self) -> bool:
        return self.kind in (TypeKind.VARCHAR, TypeKind.CHAR)

    @property
    def is_bool(self) -> bool:
        return self.kind == TypeKind.BOOL

    @property
    def exact_scale(self) -> int:
        """Scale of the scaled-integer representation (0 for int64)."""
        return self.scale if self.kind == TypeKind.DECIMAL else 0

    def __str__(self) -> str:
        if self.kind is None:
            return "null"
        if self.kind == TypeKind.DECIMAL:
            return f"decimal({self.precision},{self.scale})"
        if self.kind == TypeKind.CHAR and self.length:
            return f"char({self.length})"
        return self.kind.value


NULL = SqlType(None)
INT64 = SqlType(TypeKind.INT64)
DOUBLE = SqlType(TypeKind.DOUBLE)
DATE = SqlType(TypeKind.DATE)
VARCHAR = SqlType(TypeKind.VARCHAR)
BOOL = SqlType(TypeKind.BOOL)


def decimal(precision: int, scale: int) -> SqlType:
    return SqlType(TypeKind.DECIMAL, scale=scale, precision=min(max(precision, scale), MAX_PRECISION))


def from_spec(spec: ColumnSpec) -> SqlType:
    if spec.type == TypeKind.DECIMAL:
        return decimal(spec.precision or 18, spec.scale or 0)
    if spec.type == TypeKind.CHAR:
        return SqlType(TypeKind.CHAR, length=spec.length)
    return SqlType(spec.type)


def arithmetic_result(op: str, left: SqlType, right: SqlType) -> SqlType:
    for side in (left, right):
        if not (side.is_numeric or side.is_null):
            raise BindingError(f"type mismatch: arithmetic '{op}' on {side}")
    if left.is_null and right.is_null:
        return NULL
    if left.is_null:
        left = right
    if right.is_null:
        right = left
    if op == "/":
        return DOUBLE
    if TypeKind.DOUBLE in (left.kind, right.kind):
        return DOUBLE
    if left.kind == TypeKind.INT64 and right.kind == TypeKind.INT64:
        return INT64
    ls, rs = left.exact_scale, right.exact_scale
    lp = left.precision if left.kind == TypeKind.DECIMAL else 19
    rp = right.precision if right.kind == TypeKind.DECIMAL else 19
    if op == "*":
        return decimal(lp + rp, ls + rs)
    scale = max(ls, rs)
    return decimal(max(lp - ls, rp - rs) + scale + 1, scale)


def comparable(left: SqlType, right: SqlType) -> bool:
    if left.is_null or right.is_null:
        return True
    if left.is_numeric and right.is_numeric:
        return True
    if left.is_string and right.is_string:
        return True
    return left.kind == right.kind


def unify(types: list) -> SqlType:
    """Common type of CASE branches / IN items."""
    known = [t for t in types if not t.is_null]
    if not known:
        return NULL
    if all(t.is_numeric for t in known):
        if any(t.kind == TypeKind.DOUBLE for t in known):
            return DOUBLE
        if all(t.kind == TypeKind.INT64 for t in known):
            return INT64
        scale = max(t.exact_scale for t in known)
        return decimal(MAX_PRECISION, scale)
    if all(t.is_string for t in known):
        return VARCHAR
    first = known[0]
    if all(t.kind == first.kind for t in known):
        return first
    raise BindingError("type mismatch: " + ", ".join(str(t) for t in known))


def aggregate_result(func: str, arg: Optional[SqlType]) -> SqlType:
    if func == "count":
        return INT64
    if func == "avg":
        if arg is not None and not (arg.is_numeric or arg.is_null):
            raise BindingError(f"type mismatch: AVG over {arg}")
        return DOUBLE
    if func == "sum":
        if arg is None or not (arg.is_numeric or arg.is_null):
            raise BindingError(f"type mismatch: SUM over {arg}")
        if arg.kind == TypeKind.DECIMAL:
            return decimal(MAX_PRECISION, arg.scale)
        return arg if not arg.is_null else INT64
    return arg  # min / max
