"""
Group-key and aggregate-argument encodings shared by every aggregation strategy.

A group key column becomes int64 "raw keys" whose equality is SQL equality:
dictionary codes, integers, unscaled decimals, days, 0/1, the bits of a double
(with -0.0 folded into +0.0), or the position of a string in a sorted vocabulary.
NULL is the sentinel int64 minimum. A key column with a bounded domain also has
a dense index 0..size-1 (NULL last) for direct-array aggregation.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from querysynth.errors import KernelContractError
from querysynth.kernels.vectors import Vec, as_exact
from querysynth.models.catalog import TypeKind
from querysynth.sql import types as T
from querysynth.storage.encoding import ColumnVector, EncodingKind
from querysynth.storage.table import ColumnarTable

NULL_KEY = np.iinfo(np.int64).min


@dataclass
class KeyColumn:
    type: T.SqlType
    dictionary: Optional[np.ndarray] = None   # codes index this array
    vocabulary: Optional[np.ndarray] = None   # sorted strings for non-dictionary string keys
    dense_base: Optional[int] = None
    dense_size: Optional[int] = None          # includes the NULL slot when nullable
    nullable: bool = True

    @property
    def dense(self) -> bool:
        return self.dense_size is not None

    def encode(self, vec: Vec) -> np.ndarray:
        t = self.type
        if t.is_null or vec.type.is_null:
            return np.full(len(vec), NULL_KEY, dtype=np.int64)
        if t.is_string:
            if self.dictionary is not None and vec.dictionary is self.dictionary:
                raw = vec.data.astype(np.int64)
            elif self.vocabulary is not None:
                strings = vec.strings().astype(str)
                raw = np.searchsorted(self.vocabulary.astype(str), strings).astype(np.int64)
            else:
                raise KernelContractError("string key without a dictionary or vocabulary")
        elif t.kind == TypeKind.DOUBLE:
            raw = (vec.data.astype(np.float64) + 0.0).view(np.int64)
        elif t.kind == TypeKind.BOOL:
            raw = vec.data.astype(np.int64)
        else:
            raw = vec.data.astype(np.int64, copy=False)
        if vec.nulls is not None:
            raw = np.where(vec.nulls, NULL_KEY, raw)
        return raw

    def decode(self, raw: np.ndarray) -> Vec:
        nulls = raw == NULL_KEY
        safe = np.where(nulls, 0, raw)
        t = self.type
        if t.is_null:
            data = np.zeros(len(raw), dtype=np.int64)
        elif t.is_string:
            source = self.dictionary if self.dictionary is not None else self.vocabulary
            if source is None or len(source) == 0:
                data = np.full(len(raw), "", dtype=object)
            else:
                data = np.asarray(source, dtype=object)[safe]
        elif t.kind == TypeKind.DOUBLE:
            data = safe.view(np.float64)
        elif t.kind == TypeKind.BOOL:
            data = safe.astype(bool)
        else:
            data = safe
        return Vec(data, t, nulls if nulls.any() else None)

    def dense_index(self, raw: np.ndarray) -> np.ndarray:
        if not self.dense:
            raise KernelContractError("key column has no dense domain")
        idx = raw - self.dense_base
        if self.nullable:
            idx = np.where(raw == NULL_KEY, self.dense_size - 1, idx)
        return idx

    def from_dense(self, idx: np.ndarray) -> np.ndarray:
        raw = idx.astype(np.int64) + self.dense_base
        if self.nullable:
            raw = np.where(idx == self.dense_size - 1, NULL_KEY, raw)
        return raw


def column_key(vector: ColumnVector, zone_min: Optional[int] = None, zone_max: Optional[int] = None) -> KeyColumn:
    """Key encoding for a stored column, with its dense domain when bounded."""
    t = T.from_spec(vector.spec)
    nullable = vector.nulls is not None
    extra = 1 if nullable else 0
    kind = vector.decision.kind
    if kind == EncodingKind.DICTIONARY:
        size = len(vector.dictionary) + extra
        return KeyColumn(t, dictionary=vector.dictionary, dense_base=0,
                         dense_size=max(size, 1), nullable=nullable)
    if t.is_string:
        vocab = np.unique(vector.data.astype(str)).astype(object)
        return KeyColumn(t, vocabulary=vocab, nullable=nullable)
    if t.kind == TypeKind.BOOL:
        return KeyColumn(t, dense_base=0, dense_size=2 + extra, nullable=nullable)
    if t.kind == TypeKind.DOUBLE or vector.row_count == 0:
        return KeyColumn(t, nullable=nullable)
    lo, hi = zone_min, zone_max
    if lo is None or hi is None:
        values = vector.data.astype(np.int64)
        if nullable:
            values = values[~vector.nulls]
        if values.size == 0:
            return KeyColumn(t, nullable=nullable)
        lo, hi = int(values.min()), int(values.max())
    offset = vector.decision.offset if kind == EncodingKind.BIT_PACKED else 0
    return KeyColumn(t, dense_base=int(lo) + offset, dense_size=int(hi) - int(lo) + 1 + extra,
                     nullable=nullable)


def table_column_key(table: ColumnarTable, column: str) -> KeyColumn:
    zm = table.zone_map(column)
    vector = table.column(column)
    if zm is not None and zm.block_count and vector.data.dtype.kind in "iu":
        live = ~zm.null_only()
        if live.any():
            return column_key(vector, int(zm.mins[live].min()), int(zm.maxs[live].max()))
    return column_key(vector)


def expression_key(vec: Vec) -> KeyColumn:
    """Key encoding for a computed key; string results get a vocabulary from this input."""
    t = vec.type
    if t.is_string:
        if vec.is_dictionary:
            return KeyColumn(t, dictionary=vec.dictionary)
        strings = vec.strings().astype(str)
        if vec.nulls is not None:
            strings = strings[~vec.nulls]
        return KeyColumn(t, vocabulary=np.unique(strings).astype(object))
    return KeyColumn(t)


def dense_domain(keys: Sequence[KeyColumn]) -> Optional[List[int]]:
    if not keys or not all(k.dense for k in keys):
        return None
    return [k.dense_size for k in keys]


def encode_keys(keys: Sequence[KeyColumn], vecs: Sequence[Vec], n: int) -> np.ndarray:
    """(n, k) raw key matrix; a zero-width grouping becomes one constant column."""
    if not keys:
        return np.zeros((n, 1), dtype=np.int64)
    return np.column_stack([k.encode(v) for k, v in zip(keys, vecs)]).astype(np.int64).reshape(n, len(keys))


# ===================================================================
# AGGREGATE ARGUMENTS
# ===================================================================

@dataclass
class ValueOrder:
    """Maps strings to order-preserving int64 ranks and back (MIN / MAX over strings)."""
    sorted_values: np.ndarray
    dictionary: Optional[np.ndarray] = None
    rank: Optional[np.ndarray] = None   # dictionary code -> rank

    @classmethod
    def for_vector(cls, vector: ColumnVector) -> "ValueOrder":
        if vector.dictionary is not None:
            rank = vector.dictionary_rank()
            ordered = np.empty(len(rank), dtype=object)
            ordered[rank] = vector.dictionary
            return cls(sorted_values=ordered, dictionary=vector.dictionary, rank=rank)
        return cls(sorted_values=np.unique(vector.data.astype(str)).astype(object))

    @classmethod
    def for_values(cls, vec: Vec) -> "ValueOrder":
        strings = vec.strings().astype(str)
        if vec.nulls is not None:
            strings = strings[~vec.nulls]
        return cls(sorted_values=np.unique(strings).astype(object))

    def ranks(self, vec: Vec) -> np.ndarray:
        if self.rank is not None and vec.dictionary is self.dictionary:
            return self.rank[vec.data] if len(self.rank) else vec.data.astype(np.int64)
        return np.searchsorted(self.sorted_values.astype(str), vec.strings().astype(str)).astype(np.int64)

    def values(self, ranks: np.ndarray) -> np.ndarray:
        if len(self.sorted_values) == 0:
            return np.full(len(ranks), "", dtype=object)
        return self.sorted_values[np.clip(ranks, 0, len(self.sorted_values) - 1)]


@dataclass
class AggInput:
    values: Optional[np.ndarray]   # int64 or float64; None for COUNT(*)
    valid: np.ndarray              # non-NULL rows


def agg_input(func: str, vec: Optional[Vec], n: int, order: Optional[ValueOrder] = None) -> AggInput:
    if vec is None:
        return AggInput(None, np.ones(n, dtype=bool))
    valid = ~vec.null_mask()
    if func == "count" or vec.type.is_null:
        return AggInput(None, valid if not vec.type.is_null else np.zeros(n, dtype=bool))
    t = vec.type
    if t.is_string:
        if order is None:
            raise KernelContractError(f"{func} over strings needs a value order")
        return AggInput(order.ranks(vec), valid)
    if t.kind == TypeKind.DOUBLE:
        return AggInput(vec.data.astype(np.float64, copy=False), valid)
    if t.is_exact:
        return AggInput(as_exact(vec, t.exact_scale), valid)
    return AggInput(vec.data.astype(np.int64), valid)
