"""
ColumnarTable: one relation's encoded columns, zone maps and derived indexes.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from querysynth.errors import QuerySynthError
from querysynth.models.catalog import TableSchema
from querysynth.storage.encoding import (
    ColumnVector, EncodingDecision, choose_encoding, decode_column, encode_column,
)
from querysynth.storage.index import IndexKind, SecondaryIndex, build_index, index_id
from querysynth.storage.zonemap import DEFAULT_BLOCK_SIZE, ZoneMap, build_zone_maps, zone_map_supported

logger = logging.getLogger(__name__)


@dataclass
class ColumnarTable:
    name: str
    schema: TableSchema
    columns: Dict[str, ColumnVector]
    zone_maps: Dict[str, ZoneMap] = field(default_factory=dict)
    indexes: Dict[str, SecondaryIndex] = field(default_factory=dict)
    block_size: int = DEFAULT_BLOCK_SIZE
    frozen: bool = False

    def __post_init__(self):
        counts = {c.row_count for c in self.columns.values()}
        if len(counts) > 1:
            raise QuerySynthError(f"table {self.name}: columns disagree on row_count {sorted(counts)}")

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return next(iter(self.columns.values())).row_count

    def column(self, name: str) -> ColumnVector:
        return self.columns[name]

    def zone_map(self, name: str) -> Optional[ZoneMap]:
        return self.zone_maps.get(name)

    def freeze(self) -> "ColumnarTable":
        for vec in self.columns.values():
            vec.freeze()
        self.frozen = True
        return self

    def encodings(self) -> Dict[str, EncodingDecision]:
        return {name: vec.decision for name, vec in self.columns.items()}

    # Derived structures may be added after load; column data never changes.

    def ensure_index(self, column: str, kind: IndexKind) -> SecondaryIndex:
        key = index_id(self.name, column, kind)
        if key not in self.indexes:
            logger.info("building %s index on %s.%s", IndexKind(kind).value, self.name, column)
            self.indexes[key] = build_index(self, column, kind)
        return self.indexes[key]

    def find_index(self, column: str) -> Optional[SecondaryIndex]:
        for idx in self.indexes.values():
            if idx.column == column:
                return idx
        return None

    def reencode(self, column: str, decision: EncodingDecision) -> None:
        """Swap one column's physical layout (storage-design requests). Values are unchanged."""
        vec = self.columns[column]
        if vec.decision == decision:
            return
        values = decode_column(vec)
        new_vec = encode_column(values, decision, vec.spec)
        if self.frozen:
            new_vec.freeze()
        self.columns[column] = new_vec
        if self.zone_maps and zone_map_supported(new_vec):
            self.zone_maps[column] = build_zone_maps(new_vec, self.block_size)
        else:
            self.zone_maps.pop(column, None)
        for key in [k for k, idx in self.indexes.items() if idx.column == column]:
            idx = self.indexes.pop(key)
            self.indexes[key] = build_index(self, column, idx.kind)


def build_table(name: str, schema: TableSchema, columns: Dict[str, ColumnVector],
                block_size: int = DEFAULT_BLOCK_SIZE, zone_maps: bool = True) -> ColumnarTable:
    table = ColumnarTable(name=name, schema=schema, columns=columns, block_size=block_size)
    if zone_maps:
        for col_name, vec in columns.items():
            if zone_map_supported(vec):
                table.zone_maps[col_name] = build_zone_maps(vec, block_size)
    return table.freeze()


def encode_table(name: str, schema: TableSchema, values: Dict[str, List],
                 block_size: int = DEFAULT_BLOCK_SIZE) -> ColumnarTable:
    """Choose encodings from exact stats and encode parsed column values."""
    from querysynth.analyzer.stats import stats_from_values

    columns = {}
    for spec in schema.columns:
        col_values = values[spec.name]
        decision = choose_encoding(stats_from_values(col_values), spec)
        columns[spec.name] = encode_column(col_values, decision, spec)
    return build_table(name, schema, columns, block_size)
