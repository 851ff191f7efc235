"""
Column encodings.

Every column is stored in an encoded domain chosen from its statistics:
  - raw          values as-is (int64 / float64 / bool / object strings)
  - dictionary   first-occurrence dictionary + codes packed to ceil(log2(ndv)) bits
  - bit_packed   int64 stored as (value - offset) in `bit_width` bits
  - scaled_int   decimal(p, s) stored as int64 = value * 10^s
  - date_days    date stored as days since 1970-01-01
"""
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal
from enum import Enum
from typing import Any, List, Optional, Sequence

import numpy as np

from querysynth.errors import EncodingError
from querysynth.models.catalog import ColumnSpec, TypeKind

EPOCH = date(1970, 1, 1)
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
DICTIONARY_NDV_LIMIT = 1 << 16


class EncodingKind(str, Enum):
    RAW = "raw"
    DICTIONARY = "dictionary"
    BIT_PACKED = "bit_packed"
    SCALED_INT = "scaled_int"
    DATE_DAYS = "date_days"


@dataclass(frozen=True)
class EncodingDecision:
    kind: EncodingKind
    bit_width: Optional[int] = None
    offset: int = 0
    scale_factor: int = 1

    def describe(self) -> str:
        if self.kind == EncodingKind.DICTIONARY:
            return f"dictionary({self.bit_width}-bit codes)"
        if self.kind == EncodingKind.BIT_PACKED:
            return f"bit_packed({self.bit_width} bits, offset {self.offset})"
        if self.kind == EncodingKind.SCALED_INT:
            return f"scaled_int(x{self.scale_factor})"
        return self.kind.value

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "bit_width": self.bit_width,
            "offset": self.offset,
            "scale_factor": self.scale_factor,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EncodingDecision":
        return cls(
            kind=EncodingKind(data["kind"]),
            bit_width=data.get("bit_width"),
            offset=int(data.get("offset", 0)),
            scale_factor=int(data.get("scale_factor", 1)),
        )


def bits_needed(max_code: int) -> int:
    """ceil(log2(max_code + 1)), floor 1."""
    if max_code <= 0:
        return 1
    return max(1, int(max_code).bit_length())


def uint_dtype_for(width: int) -> np.dtype:
    if width <= 8:
        return np.dtype(np.uint8)
    if width <= 16:
        return np.dtype(np.uint16)
    if width <= 32:
        return np.dtype(np.uint32)
    return np.dtype(np.uint64)


# ===================================================================
# ENCODING CHOICE
# ===================================================================

def choose_encoding(stats: Any, spec: ColumnSpec,
                    ndv_limit: int = DICTIONARY_NDV_LIMIT) -> EncodingDecision:
    """
    Deterministic encoding choice from full-column statistics.

    `stats` is anything with row_count / ndv / min / max / null_count
    (analyzer ColumnStats).
    """
    if spec.type == TypeKind.DECIMAL:
        return EncodingDecision(EncodingKind.SCALED_INT, scale_factor=10 ** (spec.scale or 0))
    if spec.type == TypeKind.DATE:
        return EncodingDecision(EncodingKind.DATE_DAYS)
    if spec.type in (TypeKind.VARCHAR, TypeKind.CHAR):
        if stats.ndv <= ndv_limit:
            return EncodingDecision(EncodingKind.DICTIONARY,
                                    bit_width=bits_needed(max(stats.ndv - 1, 0)))
        return EncodingDecision(EncodingKind.RAW)
    if spec.type == TypeKind.INT64 and stats.ndv > 0 and stats.row_count > 0:
        span = int(stats.max) - int(stats.min)
        width = bits_needed(span)
        if width < 64 and stats.ndv / stats.row_count < 0.5:
            return EncodingDecision(EncodingKind.BIT_PACKED, bit_width=width, offset=int(stats.min))
    return EncodingDecision(EncodingKind.RAW)


# ===================================================================
# COLUMN VECTOR
# ===================================================================

@dataclass
class ColumnVector:
    spec: ColumnSpec
    decision: EncodingDecision
    data: np.ndarray
    nulls: Optional[np.ndarray] = None
    dictionary: Optional[np.ndarray] = None
    _sorted_rank: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def row_count(self) -> int:
        return int(self.data.shape[0])

    @property
    def encoding(self) -> EncodingKind:
        return self.decision.kind

    @property
    def order_preserving(self) -> bool:
        return self.decision.kind != EncodingKind.DICTIONARY

    def null_mask(self) -> np.ndarray:
        if self.nulls is None:
            return np.zeros(self.row_count, dtype=bool)
        return self.nulls

    def freeze(self) -> None:
        for arr in (self.data, self.nulls, self.dictionary):
            if arr is not None:
                arr.flags.writeable = False

    def dictionary_rank(self) -> np.ndarray:
        """code → rank of its string in sorted dictionary order (for MIN/MAX/ORDER BY)."""
        if self._sorted_rank is None:
            order = np.argsort(self.dictionary.astype(str), kind="stable")
            rank = np.empty(len(order), dtype=np.int64)
            rank[order] = np.arange(len(order), dtype=np.int64)
            self._sorted_rank = rank
        return self._sorted_rank

    def code_of(self, value: str) -> Optional[int]:
        """Dictionary code for a string, None when absent."""
        if self.dictionary is None:
            raise EncodingError(f"{self.spec.name} is not dictionary encoded")
        hits = np.flatnonzero(self.dictionary == value)
        return int(hits[0]) if hits.size else None

    def numeric(self) -> np.ndarray:
        """Encoded values as a computable array (int64 for integer domains)."""
        kind = self.decision.kind
        if kind == EncodingKind.BIT_PACKED:
            return self.data.astype(np.int64) + np.int64(self.decision.offset)
        if kind in (EncodingKind.SCALED_INT, EncodingKind.DATE_DAYS):
            return self.data.astype(np.int64, copy=False)
        if kind == EncodingKind.DICTIONARY:
            return self.data.astype(np.int64)
        return self.data

    def to_logical(self, encoded: Any) -> Any:
        """Encoded scalar (as stored in zone maps) → comparable logical scalar."""
        kind = self.decision.kind
        if kind == EncodingKind.SCALED_INT:
            return Decimal(int(encoded)).scaleb(-(self.spec.scale or 0))
        if kind == EncodingKind.DATE_DAYS:
            return EPOCH + timedelta(days=int(encoded))
        if kind == EncodingKind.BIT_PACKED:
            return int(encoded) + self.decision.offset
        if kind == EncodingKind.DICTIONARY:
            return self.dictionary[int(encoded)]
        if isinstance(encoded, np.generic):
            return encoded.item()
        return encoded


# ===================================================================
# ENCODE / DECODE
# ===================================================================

def _to_scaled(value: Decimal, scale: int, row: int) -> int:
    scaled = Decimal(value).scaleb(scale)
    if scaled != scaled.to_integral_value():
        raise EncodingError(f"row {row}: {value} has more than {scale} decimal places")
    unscaled = int(scaled)
    if not INT64_MIN <= unscaled <= INT64_MAX:
        raise EncodingError(f"row {row}: {value} overflows scaled int64")
    return unscaled


def encode_column(values: Sequence[Any], decision: EncodingDecision,
                  spec: ColumnSpec) -> ColumnVector:
    """Encode parsed scalars (None = NULL) into a ColumnVector. Lossless."""
    n = len(values)
    null_flags = np.fromiter((v is None for v in values), dtype=bool, count=n)
    if null_flags.any() and not spec.nullable:
        row = int(np.flatnonzero(null_flags)[0])
        raise EncodingError(f"{spec.name}: NULL at row {row} in non-nullable column")
    nulls = null_flags if spec.nullable else None
    kind = decision.kind
    dictionary = None

    if kind == EncodingKind.SCALED_INT:
        scale = spec.scale or 0
        data = np.fromiter(
            (0 if v is None else _to_scaled(v, scale, i) for i, v in enumerate(values)),
            dtype=np.int64, count=n,
        )
    elif kind == EncodingKind.DATE_DAYS:
        data = np.fromiter(
            (0 if v is None else (v - EPOCH).days for v in values), dtype=np.int32, count=n
        )
    elif kind == EncodingKind.DICTIONARY:
        lookup: dict = {}
        codes = np.empty(n, dtype=np.int64)
        for i, v in enumerate(values):
            codes[i] = 0 if v is None else lookup.setdefault(v, len(lookup))
        width = decision.bit_width or bits_needed(max(len(lookup) - 1, 0))
        if len(lookup) and bits_needed(len(lookup) - 1) > width:
            raise EncodingError(f"{spec.name}: {len(lookup)} distinct values exceed {width}-bit codes")
        data = codes.astype(uint_dtype_for(width))
        dictionary = np.array(list(lookup.keys()), dtype=object)
    elif kind == EncodingKind.BIT_PACKED:
        width = decision.bit_width or 64
        offsets = np.empty(n, dtype=object)
        limit = 1 << width
        for i, v in enumerate(values):
            off = 0 if v is None else int(v) - decision.offset
            if not 0 <= off < limit:
                raise EncodingError(
                    f"{spec.name}: row {i} value {v} outside bit_packed({width}, offset {decision.offset})"
                )
            offsets[i] = off
        data = offsets.astype(uint_dtype_for(width))
    else:
        data = _encode_raw(values, spec)

    return ColumnVector(spec=spec, decision=decision, data=data, nulls=nulls, dictionary=dictionary)


def _encode_raw(values: Sequence[Any], spec: ColumnSpec) -> np.ndarray:
    n = len(values)
    if spec.type == TypeKind.INT64:
        for i, v in enumerate(values):
            if v is not None and not INT64_MIN <= int(v) <= INT64_MAX:
                raise EncodingError(f"{spec.name}: row {i} value {v} overflows int64")
        return np.fromiter((0 if v is None else int(v) for v in values), dtype=np.int64, count=n)
    if spec.type == TypeKind.DOUBLE:
        return np.fromiter((0.0 if v is None else float(v) for v in values), dtype=np.float64, count=n)
    if spec.type == TypeKind.BOOL:
        return np.fromiter((False if v is None else bool(v) for v in values), dtype=bool, count=n)
    if spec.type in (TypeKind.VARCHAR, TypeKind.CHAR):
        return np.array(["" if v is None else str(v) for v in values], dtype=object)
    raise EncodingError(f"{spec.name}: raw encoding not defined for {spec.type.value}")


def decode_value(vector: ColumnVector, row: int) -> Any:
    if vector.nulls is not None and vector.nulls[row]:
        return None
    kind = vector.decision.kind
    raw = vector.data[row]
    if kind == EncodingKind.DICTIONARY:
        return vector.dictionary[int(raw)]
    if kind == EncodingKind.RAW:
        return raw.item() if isinstance(raw, np.generic) else raw
    return vector.to_logical(raw)


def decode_column(vector: ColumnVector) -> List[Any]:
    """Whole column as Python scalars (None for NULL)."""
    kind = vector.decision.kind
    if kind == EncodingKind.DICTIONARY:
        if len(vector.dictionary) == 0:
            out = [None] * vector.row_count
        else:
            out = vector.dictionary[vector.data.astype(np.int64)].tolist()
    elif kind == EncodingKind.SCALED_INT:
        scale = vector.spec.scale or 0
        out = [Decimal(v).scaleb(-scale) for v in vector.data.tolist()]
    elif kind == EncodingKind.DATE_DAYS:
        out = [EPOCH + timedelta(days=v) for v in vector.data.tolist()]
    elif kind == EncodingKind.BIT_PACKED:
        off = vector.decision.offset
        out = [v + off for v in vector.data.tolist()]
    else:
        out = vector.data.tolist()
    if vector.nulls is not None:
        for i in np.flatnonzero(vector.nulls).tolist():
            out[i] = None
    return out


def from_encoded(spec: ColumnSpec, decision: EncodingDecision, data: np.ndarray,
                 nulls: Optional[np.ndarray] = None,
                 dictionary: Optional[Sequence[str]] = None) -> ColumnVector:
    """Wrap already-encoded arrays (bulk generators, tests, storage load)."""
    if decision.kind in (EncodingKind.DICTIONARY, EncodingKind.BIT_PACKED):
        width = decision.bit_width or 64
        if data.size and int(data.max()) >= (1 << width):
            raise EncodingError(f"{spec.name}: code exceeds {width}-bit width")
        data = data.astype(uint_dtype_for(width), copy=False)
    if decision.kind == EncodingKind.DICTIONARY:
        dictionary = np.array(list(dictionary or []), dtype=object)
        if data.size and int(data.max()) >= max(len(dictionary), 1):
            raise EncodingError(f"{spec.name}: dictionary code out of range")
    if nulls is not None and not spec.nullable:
        nulls = None
    return ColumnVector(spec=spec, decision=decision, data=data, nulls=nulls,
                        dictionary=dictionary if decision.kind == EncodingKind.DICTIONARY else None)


# ===================================================================
# BIT PACKING (width-exact on-disk layout; width 4 is nibble packing)
# ===================================================================

_PACK_CHUNK = 1 << 20


def pack_bits(values: np.ndarray, width: int) -> bytes:
    """Pack unsigned values into exactly `width` bits each, LSB first."""
    values = np.asarray(values, dtype=np.uint64)
    shifts = np.arange(width, dtype=np.uint64)
    bit_chunks = []
    for start in range(0, values.size, _PACK_CHUNK):
        chunk = values[start:start + _PACK_CHUNK]
        bit_chunks.append(((chunk[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel())
    if not bit_chunks:
        return b""
    return np.packbits(np.concatenate(bit_chunks), bitorder="little").tobytes()


def unpack_bits(buf: bytes, width: int, count: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little",
                         count=count * width)
    weights = np.left_shift(np.uint64(1), np.arange(width, dtype=np.uint64))
    out = np.empty(count, dtype=np.uint64)
    for start in range(0, count, _PACK_CHUNK):
        stop = min(count, start + _PACK_CHUNK)
        block = bits[start * width:stop * width].reshape(stop - start, width).astype(np.uint64)
        out[start:stop] = block @ weights
    return out.astype(uint_dtype_for(width))
