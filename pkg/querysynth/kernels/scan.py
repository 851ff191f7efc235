"""
scan_filter: zone-map block pruning followed by predicated per-row evaluation.

A conjunct of the form `column <op> constant` (also BETWEEN, IN-list, IS [NOT] NULL
and LIKE on a dictionary column) is translated into the column's encoded domain so
whole blocks can be rejected from their (min, max, null_count) entry. Surviving
rows are filtered by evaluating every conjunct as a boolean mask; the selection
vector is the ascending positions where all masks hold.
"""
import logging
import math
from dataclasses import dataclass
from datetime import date
from decimal import Decimal
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from querysynth.kernels.expressions import predicate_mask
from querysynth.kernels.morsel import NO_DEADLINE, Deadline, Morsel, make_morsels, run_morsels
from querysynth.kernels.vectors import Frame, Vec
from querysynth.sql.ast import Between, ColumnRef, Compare, Expr, InList, IsNull, Like, Literal
from querysynth.storage.encoding import EPOCH, ColumnVector, EncodingKind
from querysynth.storage.table import ColumnarTable
from querysynth.storage.zonemap import ZoneMap

logger = logging.getLogger(__name__)

_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "<>": "<>"}


@dataclass
class ScanResult:
    positions: np.ndarray
    blocks_total: int = 0
    blocks_skipped: int = 0
    rows_evaluated: int = 0

    @property
    def row_count(self) -> int:
        return int(self.positions.shape[0])


@dataclass(frozen=True, eq=False)
class BlockFilter:
    """A conjunct's necessary condition on one column, checked per zone-map block."""
    column: str
    lo: Optional[float] = None           # encoded inclusive bounds
    hi: Optional[float] = None
    code_mask: Optional[np.ndarray] = None  # dictionary codes that can satisfy the conjunct
    null_test: Optional[bool] = None     # True: IS NULL, False: IS NOT NULL

    def keep(self, zm: ZoneMap, blocks: np.ndarray) -> np.ndarray:
        counts = zm.null_counts[blocks]
        only_null = zm.null_only()[blocks]
        if self.null_test is True:
            return counts > 0
        if self.null_test is False:
            return ~only_null
        keep = ~only_null
        mins, maxs = zm.mins[blocks], zm.maxs[blocks]
        if self.code_mask is not None:
            if not self.code_mask.any():
                return np.zeros(len(blocks), dtype=bool)
            # any satisfying code inside [min, max]
            hits = np.concatenate([[0], np.cumsum(self.code_mask, dtype=np.int64)])
            lo = np.clip(mins, 0, len(self.code_mask)).astype(np.int64)
            hi = np.clip(maxs + 1, 0, len(self.code_mask)).astype(np.int64)
            return keep & (hits[hi] > hits[lo])
        if self.lo is not None:
            keep &= maxs >= self.lo
        if self.hi is not None:
            keep &= mins <= self.hi
        return keep


# ===================================================================
# CONJUNCT TRANSLATION
# ===================================================================

def _column_and_constants(c: Expr) -> Optional[Tuple[ColumnRef, str, List[Any]]]:
    if isinstance(c, Compare):
        if isinstance(c.left, ColumnRef) and isinstance(c.right, Literal):
            return c.left, c.op, [c.right.value]
        if isinstance(c.right, ColumnRef) and isinstance(c.left, Literal):
            return c.right, _FLIP[c.op], [c.left.value]
        return None
    if isinstance(c, Between) and not c.negated and isinstance(c.operand, ColumnRef):
        if isinstance(c.low, Literal) and isinstance(c.high, Literal):
            return c.operand, "between", [c.low.value, c.high.value]
        return None
    if isinstance(c, InList) and not c.negated and isinstance(c.operand, ColumnRef):
        if all(isinstance(i, Literal) for i in c.items):
            return c.operand, "in", [i.value for i in c.items]
        return None
    if isinstance(c, IsNull) and isinstance(c.operand, ColumnRef):
        return c.operand, "is_not_null" if c.negated else "is_null", []
    if isinstance(c, Like) and not c.negated and isinstance(c.operand, ColumnRef):
        return c.operand, "like", []
    return None


def _encoded_bounds(vector: ColumnVector, value: Any) -> Optional[Tuple[float, float]]:
    """Inclusive (floor, ceil) of a constant in the column's encoded domain."""
    if value is None or isinstance(value, (bool, str)):
        return None
    kind = vector.decision.kind
    if kind == EncodingKind.DATE_DAYS:
        if not isinstance(value, date):
            return None
        d = (value - EPOCH).days
        return d, d
    if isinstance(value, date):
        return None
    if kind == EncodingKind.RAW and vector.data.dtype.kind == "f":
        f = float(value)
        return f, f
    if kind == EncodingKind.SCALED_INT:
        scale = vector.spec.scale or 0
    elif kind in (EncodingKind.BIT_PACKED, EncodingKind.RAW) and vector.data.dtype.kind in "iu":
        scale = 0
    else:
        return None
    offset = vector.decision.offset if kind == EncodingKind.BIT_PACKED else 0
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        # double constants compare in floating point; widen by one unit
        x = Decimal(value).scaleb(scale)
        return math.floor(x) - 1 - offset, math.ceil(x) + 1 - offset
    x = Decimal(value).scaleb(scale)
    return math.floor(x) - offset, math.ceil(x) - offset


def block_filter(conjunct: Expr, table: ColumnarTable) -> Optional[BlockFilter]:
    """Translate a conjunct into a block-level test, or None when it cannot prune."""
    parts = _column_and_constants(conjunct)
    if parts is None:
        return None
    ref, op, values = parts
    if ref.name not in table.zone_maps:
        return None
    vector = table.column(ref.name)
    if op == "is_null":
        return BlockFilter(ref.name, null_test=True)
    if op == "is_not_null":
        return BlockFilter(ref.name, null_test=False)

    if vector.decision.kind == EncodingKind.DICTIONARY:
        if op == "<>" or not len(vector.dictionary):
            return None
        entries = Frame(tables={}, positions={}, length=len(vector.dictionary))
        entries.precomputed[ref] = Vec(vector.dictionary, ref.type)
        mask = predicate_mask(conjunct, entries)
        return BlockFilter(ref.name, code_mask=mask)

    if op in ("like", "<>"):
        return None
    bounds = [_encoded_bounds(vector, v) for v in values]
    if op == "in":
        present = [b for b in bounds if b is not None]
        if len(present) != len([v for v in values if v is not None]) or not present:
            return None
        return BlockFilter(ref.name, lo=min(b[0] for b in present), hi=max(b[1] for b in present))
    if any(b is None for b in bounds):
        return None
    if op == "between":
        return BlockFilter(ref.name, lo=bounds[0][0], hi=bounds[1][1])
    lo, hi = bounds[0]
    if op == "=":
        return BlockFilter(ref.name, lo=lo, hi=hi)
    if op in (">", ">="):
        return BlockFilter(ref.name, lo=lo)
    return BlockFilter(ref.name, hi=hi)


# ===================================================================
# SCAN
# ===================================================================

def _block_ranges(zm: ZoneMap, blocks: np.ndarray, morsel: Morsel) -> np.ndarray:
    if blocks.size == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.maximum(blocks * zm.block_size, morsel.start)
    ends = np.minimum((blocks + 1) * zm.block_size, morsel.end)
    lengths = np.maximum(ends - starts, 0)
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    # concatenated aranges without a Python loop
    offsets = np.repeat(starts - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
    return (np.arange(total, dtype=np.int64) + offsets).astype(np.int64)


def scan_filter(table: ColumnarTable, alias: str, conjuncts: Sequence[Expr], morsel: Morsel,
                use_zone_maps: bool = True, subqueries: Optional[Mapping[int, Any]] = None,
                candidates: Optional[np.ndarray] = None) -> ScanResult:
    """
    Qualifying positions of one morsel.

    `candidates` restricts evaluation to given ascending positions (index postings).
    """
    subqueries = subqueries or {}
    if candidates is not None:
        lo, hi = np.searchsorted(candidates, [morsel.start, morsel.end])
        positions = candidates[lo:hi]
        blocks_total = blocks_skipped = 0
    else:
        filters = [f for f in (block_filter(c, table) for c in conjuncts) if f is not None] if use_zone_maps else []
        zm = table.zone_map(filters[0].column) if filters else None
        if zm is not None and morsel.size > 0:
            blocks = np.asarray(zm.blocks_overlapping(morsel.start, morsel.end), dtype=np.int64)
            keep = np.ones(len(blocks), dtype=bool)
            for f in filters:
                keep &= f.keep(table.zone_map(f.column), blocks)
            blocks_total = int(len(blocks))
            blocks_skipped = int((~keep).sum())
            positions = _block_ranges(zm, blocks[keep], morsel)
        else:
            positions = np.arange(morsel.start, morsel.end, dtype=np.int64)
            blocks_total = blocks_skipped = 0

    evaluated = int(positions.shape[0])
    for conjunct in conjuncts:
        if positions.size == 0:
            break
        frame = Frame(tables={alias: table}, positions={alias: positions}, length=int(positions.shape[0]),
                      subqueries=subqueries)
        positions = positions[predicate_mask(conjunct, frame)]
    return ScanResult(positions=positions, blocks_total=blocks_total,
                      blocks_skipped=blocks_skipped, rows_evaluated=evaluated)


def scan_table(table: ColumnarTable, alias: str, conjuncts: Sequence[Expr], *,
               use_zone_maps: bool = True, morsel_size: int = 65536, thread_count: int = 1,
               deadline: Deadline = NO_DEADLINE, subqueries: Optional[Mapping[int, Any]] = None,
               candidates: Optional[np.ndarray] = None) -> ScanResult:
    """Parallel scan_filter over every morsel of the table; positions stay ascending."""
    morsels = make_morsels(table.row_count, morsel_size)
    parts = run_morsels(
        lambda _tid, m: scan_filter(table, alias, conjuncts, m, use_zone_maps, subqueries, candidates),
        morsels, thread_count, deadline,
    )
    if not parts:
        return ScanResult(positions=np.zeros(0, dtype=np.int64))
    return ScanResult(
        positions=np.concatenate([p.positions for p in parts]).astype(np.int64),
        blocks_total=sum(p.blocks_total for p in parts),
        blocks_skipped=sum(p.blocks_skipped for p in parts),
        rows_evaluated=sum(p.rows_evaluated for p in parts),
    )


def index_candidates(table: ColumnarTable, conjuncts: Sequence[Expr], column: str) -> Optional[np.ndarray]:
    """Ascending positions from an index for an equality / IN conjunct on `column`."""
    index = table.find_index(column)
    if index is None:
        return None
    vector = table.column(column)
    for c in conjuncts:
        parts = _column_and_constants(c)
        if parts is None or parts[0].name != column or parts[1] not in ("=", "in"):
            continue
        values = [v for v in parts[2] if v is not None]
        if any(isinstance(v, float) for v in values) and vector.data.dtype.kind != "f":
            return None
        keys = [_encoded_key(vector, v) for v in values]
        postings = [index.postings(k) for k in keys if k is not None]
        if not postings:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(postings)).astype(np.int64)
    return None


def _encoded_key(vector: ColumnVector, value: Any) -> Any:
    """Stored (encoded) form of a constant, as the index keys it; None when no row can equal it."""
    kind = vector.decision.kind
    if kind == EncodingKind.DICTIONARY:
        return vector.code_of(str(value)) if isinstance(value, str) else None
    if vector.data.dtype.kind == "O":
        return str(value)
    if vector.data.dtype.kind == "f":
        return float(value)
    bounds = _encoded_bounds(vector, value)
    if bounds is None or bounds[0] != bounds[1]:
        return None
    return int(bounds[0])


def describe_filters(table: ColumnarTable, conjuncts: Sequence[Expr]) -> Dict[str, str]:
    """Which conjunct columns can prune blocks (used in plan renderings)."""
    out = {}
    for c in conjuncts:
        f = block_filter(c, table)
        if f is not None:
            out[f.column] = "codes" if f.code_mask is not None else "range"
    return out
