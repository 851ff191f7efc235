"""
Secondary indexes: key → ascending row positions over the encoded key domain.

Both kinds share the same postings layout (positions grouped by key, ascending
within a key); hash_multimap adds a dict for O(1) key lookup, sorted_positions
keeps keys in ascending order so postings can be consumed in key order.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from querysynth.storage.encoding import ColumnVector


class IndexKind(str, Enum):
    HASH_MULTIMAP = "hash_multimap"
    SORTED_POSITIONS = "sorted_positions"


@dataclass
class SecondaryIndex:
    kind: IndexKind
    table: str
    column: str
    keys: np.ndarray          # distinct encoded keys, ascending
    offsets: np.ndarray       # postings for keys[i] are positions[offsets[i]:offsets[i+1]]
    positions: np.ndarray     # row positions grouped by key
    _lookup: Optional[Dict[int, int]] = field(default=None, repr=False)

    @property
    def index_id(self) -> str:
        return index_id(self.table, self.column, self.kind)

    @property
    def key_count(self) -> int:
        return int(self.keys.shape[0])

    def postings(self, key) -> np.ndarray:
        """Row positions for an encoded key; empty when absent."""
        slot = self._slot(key)
        if slot is None:
            return np.zeros(0, dtype=np.int64)
        return self.positions[self.offsets[slot]:self.offsets[slot + 1]]

    def _slot(self, key) -> Optional[int]:
        if self.kind == IndexKind.HASH_MULTIMAP:
            if self._lookup is None:
                self._lookup = {k: i for i, k in enumerate(self.keys.tolist())}
            return self._lookup.get(key.item() if isinstance(key, np.generic) else key)
        i = int(np.searchsorted(self.keys, key))
        if i < self.key_count and self.keys[i] == key:
            return i
        return None

    def items(self) -> Iterator[Tuple[object, np.ndarray]]:
        for i in range(self.key_count):
            yield self.keys[i].item(), self.positions[self.offsets[i]:self.offsets[i + 1]]

    def as_dict(self) -> Dict[object, list]:
        return {k: p.tolist() for k, p in self.items()}


def index_id(table: str, column: str, kind: IndexKind) -> str:
    return f"{table}.{column}.{IndexKind(kind).value}"


def _build(kind: IndexKind, table: str, vector: ColumnVector) -> SecondaryIndex:
    keys = vector.data
    rows = np.arange(vector.row_count, dtype=np.int64)
    if vector.nulls is not None:
        keep = ~vector.nulls
        keys, rows = keys[keep], rows[keep]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    positions = rows[order]
    if sorted_keys.size:
        starts = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    else:
        starts = np.zeros(0, dtype=np.int64)
    offsets = np.append(starts, sorted_keys.size).astype(np.int64)
    return SecondaryIndex(
        kind=kind,
        table=table,
        column=vector.spec.name,
        keys=sorted_keys[starts],
        offsets=offsets,
        positions=positions,
    )


def build_hash_index(table, column: str) -> SecondaryIndex:
    """Multimap from encoded key to ascending row positions; duplicates allowed."""
    return _build(IndexKind.HASH_MULTIMAP, table.name, table.columns[column])


def build_sorted_index(table, column: str) -> SecondaryIndex:
    return _build(IndexKind.SORTED_POSITIONS, table.name, table.columns[column])


def build_index(table, column: str, kind: IndexKind) -> SecondaryIndex:
    if IndexKind(kind) == IndexKind.HASH_MULTIMAP:
        return build_hash_index(table, column)
    return build_sorted_index(table, column)
