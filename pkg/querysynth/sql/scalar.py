"""
Row-at-a-time scalar semantics over Python values (None = NULL).

These are the reference rules; the vectorized kernels reproduce them on encoded
arrays. Decimal values are exact `Decimal`s; a result is representable iff its
unscaled integer (value * 10^scale) fits in a signed 64-bit integer.
"""
import math
import re
from datetime import date
from decimal import ROUND_HALF_UP, Context, Decimal, localcontext
from functools import lru_cache
from typing import Any, Callable, Optional

from querysynth.errors import ArithmeticOverflowError
from querysynth.models.catalog import TypeKind
from querysynth.sql.types import SqlType

_EXACT = Context(prec=80)
_LIMIT = 1 << 63


def check_range(value: Any, t: SqlType) -> Any:
    """Raise when an exact value's scaled representation leaves int64."""
    if value is None or t is None or not t.is_exact:
        return value
    unscaled = int(Decimal(value).scaleb(t.exact_scale, context=_EXACT)) if t.exact_scale else int(value)
    if not -_LIMIT <= unscaled < _LIMIT:
        raise ArithmeticOverflowError(f"value {value} overflows {t}")
    return value


def arith(op: str, a: Any, b: Any, result: SqlType) -> Any:
    if a is None or b is None:
        return None
    if op == "/":
        fb = float(b)
        if fb == 0.0:
            return None
        return float(a) / fb
    if result.kind == TypeKind.DOUBLE:
        a, b = float(a), float(b)
        return a + b if op == "+" else a - b if op == "-" else a * b
    with localcontext(_EXACT):
        if result.kind == TypeKind.INT64:
            out = int(a) + int(b) if op == "+" else int(a) - int(b) if op == "-" else int(a) * int(b)
        else:
            da, db = Decimal(a), Decimal(b)
            out = da + db if op == "+" else da - db if op == "-" else da * db
    return check_range(out, result)


def negate(a: Any, result: SqlType) -> Any:
    if a is None:
        return None
    return check_range(-a, result)


def _comparable_pair(a: Any, b: Any):
    if isinstance(a, float) or isinstance(b, float):
        return float(a), float(b)
    return a, b


def compare(op: str, a: Any, b: Any) -> Optional[bool]:
    if a is None or b is None:
        return None
    a, b = _comparable_pair(a, b)
    if op == "=":
        return a == b
    if op == "<>":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def and3(values) -> Optional[bool]:
    unknown = False
    for v in values:
        if v is False:
            return False
        if v is None:
            unknown = True
    return None if unknown else True


def or3(values) -> Optional[bool]:
    unknown = False
    for v in values:
        if v is True:
            return True
        if v is None:
            unknown = True
    return None if unknown else False


def not3(v: Optional[bool]) -> Optional[bool]:
    return None if v is None else not v


# ===================================================================
# LIKE
# ===================================================================

@lru_cache(maxsize=256)
def like_matcher(pattern: str) -> Callable[[str], bool]:
    """Case-sensitive matcher for `%` / `_` patterns, specialized when possible."""
    body = pattern.strip("%")
    simple = "%" not in body and "_" not in body
    if simple and pattern.startswith("%") and pattern.endswith("%") and len(pattern) >= 2:
        return lambda s: body in s
    if simple and pattern.endswith("%") and not pattern.startswith("%"):
        return lambda s: s.startswith(body)
    if simple and pattern.startswith("%") and not pattern.endswith("%"):
        return lambda s: s.endswith(body)
    if "%" not in pattern and "_" not in pattern:
        return lambda s: s == pattern
    regex = re.compile(
        "".join(".*" if ch == "%" else "." if ch == "_" else re.escape(ch) for ch in pattern),
        re.DOTALL,
    )
    return lambda s: regex.fullmatch(s) is not None


def like_kind(pattern: str) -> str:
    body = pattern.strip("%")
    if "%" in body or "_" in body:
        return "regex"
    if pattern.startswith("%") and pattern.endswith("%") and len(pattern) >= 2:
        return "contains"
    if pattern.endswith("%"):
        return "prefix"
    if pattern.startswith("%"):
        return "suffix"
    return "exact"


def like(value: Optional[str], pattern: str) -> Optional[bool]:
    if value is None:
        return None
    return like_matcher(pattern)(value)


# ===================================================================
# CAST / EXTRACT
# ===================================================================

def round_half_away(x: float, scale: int) -> int:
    """Unscaled integer of a double rounded half away from zero at `scale` digits."""
    scaled = abs(x) * (10 ** scale)
    return int(math.copysign(math.floor(scaled + 0.5), x))


def cast(value: Any, target: SqlType) -> Any:
    if value is None:
        return None
    kind = target.kind
    if kind == TypeKind.DOUBLE:
        return float(value)
    if kind == TypeKind.DECIMAL:
        if isinstance(value, float):
            out = Decimal(round_half_away(value, target.scale)).scaleb(-target.scale)
        else:
            out = Decimal(value).quantize(Decimal(1).scaleb(-target.scale), rounding=ROUND_HALF_UP,
                                          context=_EXACT)
        return check_range(out, target)
    if kind == TypeKind.INT64:
        if isinstance(value, float):
            return check_range(round_half_away(value, 0), target)
        return check_range(int(Decimal(value).quantize(Decimal(1), rounding=ROUND_HALF_UP,
                                                      context=_EXACT)), target)
    if kind == TypeKind.DATE:
        return value if isinstance(value, date) else date.fromisoformat(str(value))
    return str(value)


def extract(part: str, value: Optional[date]) -> Optional[int]:
    if value is None:
        return None
    return getattr(value, part)


def coerce_to_type(value: Any, t: SqlType) -> Any:
    """Normalize a folded constant to its bound type's Python representation."""
    if value is None or t is None or t.is_null:
        return value
    if t.kind == TypeKind.DOUBLE:
        return float(value)
    if t.kind == TypeKind.INT64 and not isinstance(value, bool):
        return int(value)
    if t.kind == TypeKind.DECIMAL:
        return Decimal(value)
    return value
