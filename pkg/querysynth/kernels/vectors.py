"""
Typed column vectors in the kernels' computation domain.

    int64         int64
    decimal(p,s)  int64 unscaled (value * 10^s)
    double        float64
    date          int64 days since 1970-01-01
    bool          bool (nulls = UNKNOWN)
    strings       int64 dictionary codes + dictionary, or object array of str
"""
from dataclasses import dataclass, field
from datetime import timedelta
from decimal import Decimal
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from querysynth.errors import ArithmeticOverflowError, KernelContractError
from querysynth.models.catalog import TypeKind
from querysynth.sql import types as T
from querysynth.sql.ast import ColumnRef, Expr
from querysynth.storage.encoding import EPOCH, ColumnVector, EncodingKind
from querysynth.storage.table import ColumnarTable

OVERFLOW_LIMIT = float(1 << 63)

_NULL_DTYPES = {TypeKind.DOUBLE: np.float64, TypeKind.BOOL: bool}


@dataclass
class Vec:
    data: np.ndarray
    type: T.SqlType
    nulls: Optional[np.ndarray] = None
    dictionary: Optional[np.ndarray] = None  # set when data holds dictionary codes

    def __len__(self) -> int:
        return int(self.data.shape[0])

    @property
    def is_dictionary(self) -> bool:
        return self.dictionary is not None

    def null_mask(self) -> np.ndarray:
        if self.nulls is None:
            return np.zeros(len(self), dtype=bool)
        return self.nulls

    def take(self, idx: np.ndarray) -> "Vec":
        return Vec(self.data[idx], self.type, None if self.nulls is None else self.nulls[idx], self.dictionary)

    def strings(self) -> np.ndarray:
        """Object array of str (dictionary decoded)."""
        if self.dictionary is not None:
            if len(self.dictionary) == 0:
                return np.full(len(self), "", dtype=object)
            return self.dictionary[self.data]
        return self.data


def merge_nulls(*masks: Optional[np.ndarray]) -> Optional[np.ndarray]:
    out = None
    for m in masks:
        if m is None:
            continue
        out = m.copy() if out is None else (out | m)
    return out


def constant(value: Any, t: T.SqlType, n: int) -> Vec:
    kind = t.kind
    if value is None or t.is_null:
        if t.is_string:
            data = np.full(n, "", dtype=object)
        else:
            data = np.zeros(n, dtype=_NULL_DTYPES.get(kind, np.int64))
        return Vec(data, t, np.ones(n, dtype=bool))
    if kind == TypeKind.DECIMAL:
        return Vec(np.full(n, int(Decimal(value).scaleb(t.scale)), dtype=np.int64), t)
    if kind == TypeKind.INT64:
        return Vec(np.full(n, int(value), dtype=np.int64), t)
    if kind == TypeKind.DOUBLE:
        return Vec(np.full(n, float(value), dtype=np.float64), t)
    if kind == TypeKind.DATE:
        return Vec(np.full(n, (value - EPOCH).days, dtype=np.int64), t)
    if kind == TypeKind.BOOL:
        return Vec(np.full(n, bool(value), dtype=bool), t)
    data = np.empty(n, dtype=object)
    data[:] = [str(value)] * n
    return Vec(data, t)


def column_vec(vector: ColumnVector, positions: Optional[np.ndarray]) -> Vec:
    """Gather a stored column into the computation domain."""
    t = T.from_spec(vector.spec)
    data = vector.data if positions is None else vector.data[positions]
    nulls = None
    if vector.nulls is not None:
        nulls = vector.nulls if positions is None else vector.nulls[positions]
    kind = vector.decision.kind
    if kind == EncodingKind.DICTIONARY:
        return Vec(data.astype(np.int64), t, nulls, vector.dictionary)
    if kind == EncodingKind.BIT_PACKED:
        return Vec(data.astype(np.int64) + np.int64(vector.decision.offset), t, nulls)
    if kind in (EncodingKind.SCALED_INT, EncodingKind.DATE_DAYS):
        return Vec(data.astype(np.int64), t, nulls)
    return Vec(data, t, nulls)


# ===================================================================
# DOMAIN CONVERSIONS
# ===================================================================

def rescale(data: np.ndarray, from_scale: int, to_scale: int) -> np.ndarray:
    if to_scale == from_scale:
        return data
    if to_scale < from_scale:
        raise KernelContractError("implicit downscale")
    factor = 10 ** (to_scale - from_scale)
    check_overflow(data.astype(np.float64) * factor)
    return data * np.int64(factor)


def as_exact(vec: Vec, scale: int) -> np.ndarray:
    """int64 unscaled at `scale` for int64/decimal vectors."""
    return rescale(vec.data.astype(np.int64, copy=False), vec.type.exact_scale, scale)


def as_float(vec: Vec) -> np.ndarray:
    if vec.type.kind == TypeKind.DECIMAL:
        return vec.data.astype(np.float64) / float(10 ** vec.type.scale)
    return vec.data.astype(np.float64, copy=False)


def check_overflow(approx: np.ndarray, mask: Optional[np.ndarray] = None) -> None:
    if approx.size == 0:
        return
    big = np.abs(approx) >= OVERFLOW_LIMIT
    if mask is not None:
        big &= ~mask
    if big.any():
        raise ArithmeticOverflowError("value overflows 64-bit scaled representation")


def round_half_away(x: np.ndarray, scale: int) -> np.ndarray:
    scaled = np.floor(np.abs(x) * float(10 ** scale) + 0.5)
    check_overflow(scaled)
    return (np.sign(x) * scaled).astype(np.int64)


def downscale_half_away(u: np.ndarray, factor: int) -> np.ndarray:
    mag = (np.abs(u) + factor // 2) // factor
    return np.where(u < 0, -mag, mag).astype(np.int64)


def coerce(vec: Vec, target: T.SqlType) -> Vec:
    """Convert to the representation of `target` (CASE branches, IN items)."""
    if target.is_null or vec.type == target:
        return Vec(vec.data, target, vec.nulls, vec.dictionary) if not target.is_null else vec
    kind = target.kind
    if vec.type.is_null:
        return constant(None, target, len(vec))
    if kind == TypeKind.DOUBLE:
        return Vec(as_float(vec), target, vec.nulls)
    if kind == TypeKind.DECIMAL:
        return Vec(as_exact(vec, target.scale), target, vec.nulls)
    if kind == TypeKind.INT64:
        return Vec(vec.data.astype(np.int64), target, vec.nulls)
    if target.is_string:
        return Vec(vec.strings(), target, vec.nulls)
    return Vec(vec.data, target, vec.nulls, vec.dictionary)


# ===================================================================
# PYTHON SCALARS
# ===================================================================

def to_python(vec: Vec) -> List[Any]:
    kind = vec.type.kind
    n = len(vec)
    if kind is None:
        return [None] * n
    if kind == TypeKind.DECIMAL:
        scale = vec.type.scale
        out = [Decimal(int(v)).scaleb(-scale) for v in vec.data.tolist()]
    elif kind == TypeKind.DATE:
        out = [EPOCH + timedelta(days=int(v)) for v in vec.data.tolist()]
    elif kind in (TypeKind.VARCHAR, TypeKind.CHAR):
        out = list(vec.strings().tolist())
    elif kind == TypeKind.DOUBLE:
        out = [float(v) for v in vec.data.tolist()]
    elif kind == TypeKind.BOOL:
        out = [bool(v) for v in vec.data.tolist()]
    else:
        out = [int(v) for v in vec.data.tolist()]
    if vec.nulls is not None:
        for i in np.flatnonzero(vec.nulls).tolist():
            out[i] = None
    return out


# ===================================================================
# KEYS
# ===================================================================

def join_keys(left: Vec, right: Vec) -> Tuple[np.ndarray, np.ndarray]:
    """Both sides of an equi-join in one int64 key space; NULL rows are masked by the caller."""
    if left.type.is_string or right.type.is_string:
        ls, rs = left.strings().astype(str), right.strings().astype(str)
        uniques, inverse = np.unique(np.concatenate([ls, rs]), return_inverse=True)
        inverse = inverse.astype(np.int64)
        return inverse[: len(ls)], inverse[len(ls):]
    if left.type.kind == TypeKind.DOUBLE or right.type.kind == TypeKind.DOUBLE:
        return ((as_float(left) + 0.0).view(np.int64), (as_float(right) + 0.0).view(np.int64))
    if left.type.is_exact and right.type.is_exact:
        scale = max(left.type.exact_scale, right.type.exact_scale)
        return as_exact(left, scale), as_exact(right, scale)
    return left.data.astype(np.int64), right.data.astype(np.int64)


# ===================================================================
# FRAMES
# ===================================================================

@dataclass
class Frame:
    """Rows of a (possibly joined) intermediate: per-alias row positions into stored tables."""
    tables: Mapping[str, ColumnarTable]          # alias -> table
    positions: Dict[str, np.ndarray]             # alias -> row positions (equal lengths)
    length: int
    precomputed: Dict[Expr, Vec] = field(default_factory=dict)
    subqueries: Mapping[int, Any] = field(default_factory=dict)
    _cache: Dict[Tuple[str, str], Vec] = field(default_factory=dict)

    def column(self, ref: ColumnRef) -> Vec:
        key = (ref.table, ref.name)
        vec = self._cache.get(key)
        if vec is None:
            vec = column_vec(self.tables[ref.table].column(ref.name), self.positions[ref.table])
            self._cache[key] = vec
        return vec
