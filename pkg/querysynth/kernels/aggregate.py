"""
Grouped aggregation: SUM / COUNT / MIN / MAX / AVG under three strategies.

Every strategy consumes batches of (raw key matrix, aggregate inputs), one batch
per morsel, and ends in a GroupedState whose groups are sorted by raw key.

  direct_array      per-thread accumulator matrix indexed by the mixed-radix dense
                    key, one cache-line-padded row per group; merged after the scan
  partitioned_hash  per-thread AggHashTable + accumulators; merged after the scan
  shared_cas        one shared AggHashTable + accumulators updated in place per
                    morsel; no merge phase

numpy offers no compare-and-swap on array cells, so the shared table applies each
morsel's read-modify-write under one lock held for that morsel's update.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from querysynth.errors import ArithmeticOverflowError, KernelContractError
from querysynth.kernels.groupkeys import AggInput, KeyColumn, ValueOrder
from querysynth.kernels.hashtable import DEFAULT_LOAD_FACTOR_CAP, AggHashTable
from querysynth.kernels.morsel import NO_DEADLINE, Deadline, Morsel, run_morsels
from querysynth.kernels.strategy import AggregationStrategy, StrategyKind
from querysynth.kernels.vectors import OVERFLOW_LIMIT, Vec
from querysynth.models.catalog import TypeKind
from querysynth.sql import types as T
from querysynth.storage.index import SecondaryIndex

logger = logging.getLogger(__name__)

_INT_MAX = np.iinfo(np.int64).max
_INT_MIN = np.iinfo(np.int64).min


@dataclass(frozen=True)
class AggSpec:
    func: str                       # sum | count | avg | min | max
    result_type: T.SqlType
    arg_type: Optional[T.SqlType] = None  # None for COUNT(*)
    order: Optional[ValueOrder] = field(default=None, compare=False)

    @property
    def floating(self) -> bool:
        return self.arg_type is not None and self.arg_type.kind == TypeKind.DOUBLE

    @property
    def exact_sum(self) -> bool:
        return self.func in ("sum", "avg") and self.arg_type is not None and self.arg_type.is_exact


@dataclass
class Batch:
    keys: np.ndarray            # (m, k) int64 raw keys
    inputs: List[AggInput]

    @property
    def size(self) -> int:
        return int(self.keys.shape[0])


# ===================================================================
# ACCUMULATOR LAYOUT
# ===================================================================

@dataclass(frozen=True)
class Lane:
    op: str        # add | count | min | max
    floating: bool


class AccumulatorLayout:
    """
    Lane 0 counts rows per group. Then per aggregate:
      sum / avg   value lane, non-NULL count lane (+ a double shadow for exact sums)
      count       count lane
      min / max   value lane, non-NULL count lane
    """

    def __init__(self, specs: Sequence[AggSpec], cache_line_bytes: Optional[int] = None):
        self.specs = list(specs)
        self.lanes: List[Lane] = [Lane("count", False)]
        self.value_lane: List[Optional[int]] = []
        self.count_lane: List[int] = []
        self.shadow_lane: List[Optional[int]] = []
        for spec in self.specs:
            value = shadow = None
            if spec.func in ("sum", "avg", "min", "max"):
                value = self._add(Lane("add" if spec.func in ("sum", "avg") else spec.func, spec.floating))
            count = self._add(Lane("count", False))
            if spec.exact_sum:
                shadow = self._add(Lane("add", True))
            self.value_lane.append(value)
            self.count_lane.append(count)
            self.shadow_lane.append(shadow)
        self.state_bytes = 8 * len(self.lanes)
        width = len(self.lanes)
        if cache_line_bytes:
            per_line = cache_line_bytes // 8
            width = -(-width // per_line) * per_line
        self.stride_lanes = width

    @property
    def stride_bytes(self) -> int:
        return 8 * self.stride_lanes

    def _add(self, lane: Lane) -> int:
        self.lanes.append(lane)
        return len(self.lanes) - 1

    def initial_row(self) -> np.ndarray:
        row = np.zeros(self.stride_lanes, dtype=np.int64)
        for j, lane in enumerate(self.lanes):
            if lane.op == "min":
                row[j] = np.array([np.inf]).view(np.int64)[0] if lane.floating else _INT_MAX
            elif lane.op == "max":
                row[j] = np.array([-np.inf]).view(np.int64)[0] if lane.floating else _INT_MIN
        return row


class Accumulators:
    """Group state as one int64 matrix (groups x padded lanes); double lanes are float views."""

    def __init__(self, layout: AccumulatorLayout, rows: int = 0):
        self.layout = layout
        self.state = np.tile(layout.initial_row(), (max(rows, 0), 1))
        self.abs_totals = [0.0] * len(layout.specs)

    @property
    def rows(self) -> int:
        return int(self.state.shape[0])

    def lane(self, j: int) -> np.ndarray:
        col = self.state[:, j]
        return col.view(np.float64) if self.layout.lanes[j].floating else col

    def ensure(self, rows: int) -> None:
        if rows <= self.rows:
            return
        grow = max(rows, 2 * self.rows) - self.rows
        self.state = np.vstack([self.state, np.tile(self.layout.initial_row(), (grow, 1))])

    def update(self, gids: np.ndarray, inputs: Sequence[AggInput]) -> None:
        np.add.at(self.lane(0), gids, 1)
        layout = self.layout
        for i, (spec, inp) in enumerate(zip(layout.specs, inputs)):
            valid = inp.valid
            g = gids[valid]
            np.add.at(self.lane(layout.count_lane[i]), g, 1)
            if layout.value_lane[i] is None:
                continue
            values = inp.values[valid]
            target = self.lane(layout.value_lane[i])
            op = layout.lanes[layout.value_lane[i]].op
            if op == "add":
                np.add.at(target, g, values)
            elif op == "min":
                np.minimum.at(target, g, values)
            else:
                np.maximum.at(target, g, values)
            if layout.shadow_lane[i] is not None:
                as_float = values.astype(np.float64)
                np.add.at(self.lane(layout.shadow_lane[i]), g, as_float)
                self.abs_totals[i] += float(np.abs(as_float).sum())

    def update_segmented(self, starts: np.ndarray, inputs: Sequence[AggInput], total: int) -> None:
        """Rows arrive grouped: group r owns rows starts[r]..starts[r+1]-1 (all non-empty)."""
        layout = self.layout
        lengths = np.diff(np.append(starts, total))
        self.lane(0)[:] += lengths
        for i, (spec, inp) in enumerate(zip(layout.specs, inputs)):
            valid = inp.valid
            self.lane(layout.count_lane[i])[:] += np.add.reduceat(valid.astype(np.int64), starts)
            if layout.value_lane[i] is None:
                continue
            target = self.lane(layout.value_lane[i])
            lane = layout.lanes[layout.value_lane[i]]
            if lane.op == "add":
                zero = 0.0 if lane.floating else 0
                target[:] += np.add.reduceat(np.where(valid, inp.values, zero), starts)
            elif lane.op == "min":
                fill = np.inf if lane.floating else _INT_MAX
                target[:] = np.minimum(target, np.minimum.reduceat(np.where(valid, inp.values, fill), starts))
            else:
                fill = -np.inf if lane.floating else _INT_MIN
                target[:] = np.maximum(target, np.maximum.reduceat(np.where(valid, inp.values, fill), starts))
            if layout.shadow_lane[i] is not None:
                as_float = np.where(valid, inp.values, 0).astype(np.float64)
                self.lane(layout.shadow_lane[i])[:] += np.add.reduceat(as_float, starts)
                self.abs_totals[i] += float(np.abs(as_float).sum())

    def merge(self, other: "Accumulators", mapping: np.ndarray) -> None:
        """Fold other's first len(mapping) groups into rows `mapping`."""
        n = len(mapping)
        if n == 0:
            return
        for j, lane in enumerate(self.layout.lanes):
            src = other.lane(j)[:n]
            target = self.lane(j)
            if lane.op in ("add", "count"):
                np.add.at(target, mapping, src)
            elif lane.op == "min":
                np.minimum.at(target, mapping, src)
            else:
                np.maximum.at(target, mapping, src)
        self.abs_totals = [a + b for a, b in zip(self.abs_totals, other.abs_totals)]

    def take(self, rows: np.ndarray) -> "Accumulators":
        out = Accumulators(self.layout)
        out.state = self.state[rows]
        out.abs_totals = list(self.abs_totals)
        return out


@dataclass
class GroupedState:
    keys: np.ndarray            # (groups, k) raw keys, ascending
    acc: Accumulators
    strategy: str
    threads_used: int = 1
    memory_bytes: int = 0

    @property
    def group_count(self) -> int:
        return int(self.keys.shape[0])


def _sorted_state(keys: np.ndarray, acc: Accumulators, strategy: str, threads: int, memory: int) -> GroupedState:
    nonempty = np.flatnonzero(acc.lane(0)[: len(keys)] > 0)
    keys = keys[nonempty]
    order = np.lexsort(keys.T[::-1]) if keys.size else np.zeros(0, dtype=np.int64)
    return GroupedState(keys=keys[order], acc=acc.take(nonempty[order]), strategy=strategy,
                        threads_used=threads, memory_bytes=memory)


# ===================================================================
# STRATEGIES
# ===================================================================

Producer = Callable[[Morsel], Batch]


def aggregate(produce: Producer, morsels: Sequence[Morsel], specs: Sequence[AggSpec],
              key_columns: Sequence[KeyColumn], strategy: AggregationStrategy, *,
              thread_count: int = 1, cache_line_bytes: int = 64, seed: int = 0,
              load_factor_cap: float = DEFAULT_LOAD_FACTOR_CAP,
              deadline: Deadline = NO_DEADLINE) -> GroupedState:
    """Run one aggregation pipeline; produce(morsel) yields that morsel's batch."""
    width = max(len(key_columns), 1)
    if strategy.kind == StrategyKind.DIRECT_ARRAY:
        return _direct_array(produce, morsels, specs, key_columns, strategy, thread_count,
                             cache_line_bytes, deadline)
    if strategy.kind == StrategyKind.PARTITIONED_HASH:
        return _partitioned_hash(produce, morsels, specs, width, strategy, thread_count, seed,
                                 load_factor_cap, deadline)
    return _shared_cas(produce, morsels, specs, width, strategy, thread_count, seed, load_factor_cap, deadline)


def _direct_array(produce, morsels, specs, key_columns, strategy, thread_count, line, deadline) -> GroupedState:
    domain = list(strategy.domain or [])
    keyed = bool(key_columns)
    if keyed and (len(domain) != len(key_columns) or any(not k.dense for k in key_columns)):
        raise KernelContractError("direct_array with non-dense keys")
    if not keyed:
        domain = [1]
    groups = math.prod(domain)
    layout = AccumulatorLayout(specs, cache_line_bytes=line)
    locals_: Dict[int, Accumulators] = {}

    def work(tid: int, morsel: Morsel) -> int:
        batch = produce(morsel)
        acc = locals_.get(tid)
        if acc is None:
            acc = locals_[tid] = Accumulators(layout, groups)
        if batch.size == 0:
            return 0
        index = np.zeros(batch.size, dtype=np.int64)
        if keyed:
            for j, (col, size) in enumerate(zip(key_columns, domain)):
                digit = col.dense_index(batch.keys[:, j])
                if digit.size and (digit.min() < 0 or digit.max() >= size):
                    raise KernelContractError("direct_array with non-dense keys")
                index = index * size + digit
        acc.update(index, batch.inputs)
        return batch.size

    run_morsels(work, list(morsels), thread_count, deadline)
    total = Accumulators(layout, groups)
    for tid in sorted(locals_):
        total.merge(locals_[tid], np.arange(groups, dtype=np.int64))

    # mixed radix back to per-column raw keys
    idx = np.arange(groups, dtype=np.int64)
    digits = []
    for size in reversed(domain):
        digits.append(idx % size)
        idx = idx // size
    digits.reverse()
    if keyed:
        keys = np.column_stack([col.from_dense(d) for col, d in zip(key_columns, digits)]).astype(np.int64)
    else:
        keys = np.zeros((groups, 1), dtype=np.int64)
    memory = groups * layout.stride_bytes * max(len(locals_), 1)
    return _sorted_state(keys, total, "direct_array", len(locals_), memory)


def _partitioned_hash(produce, morsels, specs, width, strategy, thread_count, seed, cap, deadline) -> GroupedState:
    layout = AccumulatorLayout(specs)
    tables: Dict[int, AggHashTable] = {}
    accs: Dict[int, Accumulators] = {}
    capacity = max(strategy.capacity, 2)

    def work(tid: int, morsel: Morsel) -> int:
        batch = produce(morsel)
        if tid not in tables:
            tables[tid] = AggHashTable(width, capacity, cap, seed)
            accs[tid] = Accumulators(layout)
        if batch.size == 0:
            return 0
        gids = tables[tid].find_or_insert(batch.keys)
        accs[tid].ensure(tables[tid].count)
        accs[tid].update(gids, batch.inputs)
        return batch.size

    run_morsels(work, list(morsels), thread_count, deadline)
    merged = AggHashTable(width, capacity, cap, seed)
    total = Accumulators(layout)
    for tid in sorted(tables):
        local = tables[tid]
        if local.count == 0:
            continue
        mapping = merged.find_or_insert(local.group_keys())
        total.ensure(merged.count)
        total.merge(accs[tid], mapping)
    memory = sum(t.memory_bytes for t in tables.values()) + merged.memory_bytes
    return _sorted_state(merged.group_keys(), total, "partitioned_hash", len(tables), memory)


def _shared_cas(produce, morsels, specs, width, strategy, thread_count, seed, cap, deadline) -> GroupedState:
    layout = AccumulatorLayout(specs)
    table = AggHashTable(width, max(strategy.capacity, 2), cap, seed)
    acc = Accumulators(layout)
    lock = threading.Lock()
    threads = set()

    def work(tid: int, morsel: Morsel) -> int:
        batch = produce(morsel)
        threads.add(tid)
        if batch.size == 0:
            return 0
        with lock:
            gids = table.find_or_insert(batch.keys)
            acc.ensure(table.count)
            acc.update(gids, batch.inputs)
        return batch.size

    run_morsels(work, list(morsels), thread_count, deadline)
    return _sorted_state(table.group_keys(), acc, "shared_cas", len(threads), table.memory_bytes)


def aggregate_sequential(batch: Batch, specs: Sequence[AggSpec]) -> GroupedState:
    """Single pass with np.unique grouping; the baseline the strategies are checked against."""
    layout = AccumulatorLayout(specs)
    if batch.size == 0:
        return _sorted_state(np.zeros((0, batch.keys.shape[1]), dtype=np.int64), Accumulators(layout),
                             "sequential", 1, 0)
    uniq, inverse = np.unique(batch.keys, axis=0, return_inverse=True)
    acc = Accumulators(layout, len(uniq))
    acc.update(inverse.reshape(-1), batch.inputs)
    return _sorted_state(uniq, acc, "sequential", 1, acc.state.nbytes)


def aggregate_ordered(index: SecondaryIndex, selected: np.ndarray, row_count: int,
                      gather: Callable[[np.ndarray], Batch], specs: Sequence[AggSpec],
                      deadline: Deadline = NO_DEADLINE) -> GroupedState:
    """
    Group by the indexed column by walking its postings in key order.

    `selected` are the qualifying row positions; `gather(positions)` evaluates the
    key and aggregate inputs at positions given in postings order. Rows with a
    NULL key (never indexed) form one extra group.
    """
    layout = AccumulatorLayout(specs)
    chosen = np.zeros(row_count, dtype=bool)
    chosen[selected] = True
    keep = chosen[index.positions]
    ordered = index.positions[keep]
    if index.key_count:
        per_key = np.add.reduceat(keep.astype(np.int64), index.offsets[:-1])
    else:
        per_key = np.zeros(0, dtype=np.int64)
    per_key = per_key[per_key > 0]
    deadline.check()

    parts_keys, parts_acc = [], []
    if ordered.size:
        batch = gather(ordered)
        starts = np.concatenate([[0], np.cumsum(per_key)[:-1]]).astype(np.int64)
        acc = Accumulators(layout, len(starts))
        acc.update_segmented(starts, batch.inputs, int(ordered.size))
        parts_keys.append(batch.keys[starts])
        parts_acc.append(acc)

    unindexed = np.setdiff1d(selected, ordered, assume_unique=False)
    if unindexed.size:
        batch = gather(unindexed)
        acc = Accumulators(layout, 1)
        acc.update(np.zeros(unindexed.size, dtype=np.int64), batch.inputs)
        parts_keys.append(batch.keys[:1])
        parts_acc.append(acc)

    if not parts_keys:
        return _sorted_state(np.zeros((0, 1), dtype=np.int64), Accumulators(layout), "ordered_index", 1, 0)
    keys = np.vstack(parts_keys)
    total = Accumulators(layout, len(keys))
    offset = 0
    for part in parts_acc:
        total.merge(part, np.arange(offset, offset + part.rows, dtype=np.int64))
        offset += part.rows
    return _sorted_state(keys, total, "ordered_index", 1, int(index.positions.nbytes))


# ===================================================================
# FINALIZATION
# ===================================================================

def finalize(state: GroupedState, specs: Sequence[AggSpec]) -> List[Vec]:
    """One result vector per aggregate, aligned with state.keys."""
    acc = state.acc
    layout = acc.layout
    out = []
    for i, spec in enumerate(specs):
        counts = acc.lane(layout.count_lane[i]).copy()
        if spec.func == "count":
            out.append(Vec(counts.astype(np.int64), T.INT64))
            continue
        empty = counts == 0
        nulls = empty if empty.any() else None
        values = acc.lane(layout.value_lane[i]).copy()
        overflow = _overflowed(acc, i)
        if spec.func == "sum":
            if overflow is not None and overflow.any():
                raise ArithmeticOverflowError(f"SUM overflows {spec.result_type}")
            out.append(Vec(values, spec.result_type, nulls))
        elif spec.func == "avg":
            out.append(Vec(_average(spec, values, counts, acc, i, overflow), T.DOUBLE, nulls))
        elif spec.order is not None:
            out.append(Vec(spec.order.values(values), spec.result_type, nulls))
        elif spec.result_type.kind == TypeKind.BOOL:
            out.append(Vec(values.astype(bool), spec.result_type, nulls))
        else:
            out.append(Vec(values, spec.result_type, nulls))
    return out


def _overflowed(acc: Accumulators, i: int) -> Optional[np.ndarray]:
    """Groups whose exact sum left int64; None when no group can have."""
    shadow_lane = acc.layout.shadow_lane[i]
    if shadow_lane is None or acc.abs_totals[i] < OVERFLOW_LIMIT:
        return None
    return np.abs(acc.lane(shadow_lane)) >= OVERFLOW_LIMIT


def _average(spec: AggSpec, values: np.ndarray, counts: np.ndarray, acc: Accumulators, i: int,
             overflow: Optional[np.ndarray]) -> np.ndarray:
    safe = np.where(counts == 0, 1, counts)
    if spec.floating:
        return values / safe
    scale = 10 ** spec.arg_type.exact_scale
    shadow = acc.lane(acc.layout.shadow_lane[i])
    out = np.empty(len(values), dtype=np.float64)
    for g, (u, n) in enumerate(zip(values.tolist(), safe.tolist())):
        if overflow is not None and overflow[g]:
            out[g] = float(shadow[g]) / n
        else:
            # int / int is correctly rounded, like float(Decimal)
            out[g] = (u / scale) / n
    return out
