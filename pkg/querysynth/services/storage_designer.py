"""
Materializes the encoding and index requests an agent makes.

Requests arrive already validated (known column, applicable encoding). They are
applied through the measurement queue so no plan is running while storage changes.
"""
import logging
from typing import Dict, List, Mapping, Sequence

from pydantic import BaseModel, Field

from querysynth.analyzer.stats import vector_stats
from querysynth.models.plan import EncodingRequest, IndexRequest
from querysynth.storage.encoding import EncodingDecision, EncodingKind, bits_needed
from querysynth.storage.index import IndexKind
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)


class StorageChange(BaseModel):
    query_id: str
    iteration: int
    change: str


class StorageDesignLog(BaseModel):
    changes: List[StorageChange] = Field(default_factory=list)

    def record(self, query_id: str, iteration: int, changes: Sequence[str]) -> None:
        self.changes.extend(StorageChange(query_id=query_id, iteration=iteration, change=c) for c in changes)

    def final_state(self, tables: Mapping[str, ColumnarTable]) -> Dict[str, dict]:
        return {
            name: {
                "encodings": {c: d.to_json() for c, d in t.encodings().items()},
                "indexes": sorted(t.indexes),
            }
            for name, t in sorted(tables.items())
        }


def decision_for(table: ColumnarTable, column: str, encoding: str) -> EncodingDecision:
    vec = table.column(column)
    if encoding == "raw":
        return EncodingDecision(EncodingKind.RAW)
    stats = vector_stats(vec)
    if encoding == "dictionary":
        return EncodingDecision(EncodingKind.DICTIONARY, bit_width=bits_needed(max(stats.ndv - 1, 0)))
    if stats.ndv == 0:
        return EncodingDecision(EncodingKind.BIT_PACKED, bit_width=1, offset=0)
    lo, hi = int(stats.min), int(stats.max)
    return EncodingDecision(EncodingKind.BIT_PACKED, bit_width=bits_needed(hi - lo), offset=lo)


def apply_storage_requests(tables: Mapping[str, ColumnarTable], encodings: Sequence[EncodingRequest],
                           indexes: Sequence[IndexRequest]) -> List[str]:
    """Apply requests in order; returns a description of each change actually made."""
    changes: List[str] = []
    for req in encodings:
        table = tables.get(req.table)
        if table is None:
            continue
        decision = decision_for(table, req.column, req.encoding)
        if table.column(req.column).decision == decision:
            continue
        if decision.kind == EncodingKind.BIT_PACKED and decision.bit_width >= 64:
            logger.warning("⚠️ %s.%s spans 64 bits; keeping it raw", req.table, req.column)
            continue
        table.reencode(req.column, decision)
        changes.append(f"encode {req.table}.{req.column} as {decision.describe()}")
    for req in indexes:
        table = tables.get(req.table)
        if table is None or req.index_id in table.indexes:
            continue
        table.ensure_index(req.column, IndexKind(req.kind))
        changes.append(f"index {req.index_id}")
    for change in changes:
        logger.info("🗄️ %s", change)
    return changes
