"""
Compiled-plan execution over the kernel library.

A run works on a private snapshot of the tables it reads (column, zone-map and
index dictionaries are copied, arrays are shared), so storage changes applied
between runs never tear a running plan. Cancellation is cooperative: every
morsel boundary checks the deadline.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from querysynth.config import KernelSettings
from querysynth.errors import ArithmeticOverflowError, KernelContractError, QueryTimeout
from querysynth.kernels.aggregate import (
    AccumulatorLayout, Accumulators, AggSpec, Batch, GroupedState, aggregate, aggregate_ordered, finalize,
)
from querysynth.kernels.expressions import evaluate, predicate_mask
from querysynth.kernels.groupkeys import (
    AggInput, KeyColumn, ValueOrder, agg_input, encode_keys, expression_key, table_column_key,
)
from querysynth.kernels.hashtable import JoinHashTable
from querysynth.kernels.morsel import Deadline, make_morsels, run_morsels
from querysynth.kernels.scan import ScanResult, index_candidates, scan_filter, scan_table
from querysynth.kernels.vectors import Frame, Vec, column_vec, join_keys, to_python
from querysynth.models.plan import PlanDecisionSet
from querysynth.models.profile import HardwareProfile, WorkloadProfile
from querysynth.models.results import ExecutionStats, OperatorStats
from querysynth.planner.compiler import agg_specs, compile_plan
from querysynth.planner.physical import JoinSpec, PhysicalPlan
from querysynth.reference.evaluator import SubqueryKeys
from querysynth.reference.executor import finish_result
from querysynth.reference.resultset import ResultSet, normalize_cell
from querysynth.sql.ast import ColumnRef
from querysynth.sql.binder import BoundQuery
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)

_EMPTY = np.zeros(0, dtype=np.int64)


@dataclass
class ExecutionOutcome:
    status: str                               # ok | timeout | error
    result: Optional[ResultSet] = None
    stats: ExecutionStats = field(default_factory=ExecutionStats)
    plan: Optional[PhysicalPlan] = None
    error: Optional[str] = None
    elapsed_ms: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def tables_read(query: BoundQuery) -> set:
    names = set(query.tables.values())
    for sub in query.subqueries:
        names |= tables_read(sub)
    return names


def snapshot_tables(tables: Mapping[str, ColumnarTable], names) -> Dict[str, ColumnarTable]:
    out = {}
    for name in sorted(names):
        if name not in tables:
            raise KernelContractError(f"table '{name}' is not loaded")
        t = tables[name]
        out[name] = replace(t, columns=dict(t.columns), zone_maps=dict(t.zone_maps), indexes=dict(t.indexes))
    return out


def compile_and_execute(query: BoundQuery, decisions: PlanDecisionSet, tables: Mapping[str, ColumnarTable],
                        hardware: HardwareProfile, *, profile: Optional[WorkloadProfile] = None,
                        settings: Optional[KernelSettings] = None,
                        query_timeout: Optional[float] = None) -> ExecutionOutcome:
    """Compile and run one plan; timeouts and contract violations come back as outcomes."""
    deadline = Deadline(query_timeout)
    plan = None
    label = query.query_id or "query"
    try:
        snapshot = snapshot_tables(tables, tables_read(query))
        plan = compile_plan(query, decisions, snapshot, hardware, profile, settings)
        result, stats = execute_plan(plan, snapshot, deadline)
    except QueryTimeout as exc:
        logger.warning("⏱️ %s timed out after %.3fs (limit %ss)", label, exc.elapsed_s, exc.limit_s)
        return ExecutionOutcome(status="timeout", plan=plan, error=str(exc), elapsed_ms=deadline.elapsed * 1000)
    except (KernelContractError, ArithmeticOverflowError) as exc:
        logger.warning("❌ %s failed: %s", label, exc)
        return ExecutionOutcome(status="error", plan=plan, error=str(exc), elapsed_ms=deadline.elapsed * 1000)
    return ExecutionOutcome(status="ok", result=result, stats=stats, plan=plan,
                            elapsed_ms=deadline.elapsed * 1000)


def execute_plan(plan: PhysicalPlan, tables: Mapping[str, ColumnarTable],
                 deadline: Optional[Deadline] = None) -> Tuple[ResultSet, ExecutionStats]:
    return _Execution(plan, tables, deadline or Deadline(None)).run()


# ===================================================================
# EXECUTION
# ===================================================================

class _Execution:
    def __init__(self, plan: PhysicalPlan, tables: Mapping[str, ColumnarTable], deadline: Deadline):
        self.plan = plan
        self.q = plan.query
        self.tables = tables
        self.deadline = deadline
        self.bound = {alias: tables[name] for alias, name in self.q.tables.items()}
        self.subqueries: Dict[int, SubqueryKeys] = {}
        self.operators: List[OperatorStats] = []
        self.peak = 0
        self.scan_order = [plan.base] + [j.alias for j in plan.joins]

    def record(self, node: int, op: str, started: float, rows_in: int, rows_out: int, **detail) -> None:
        self.operators.append(OperatorStats(
            node=node, op=op, wall_ms=(time.perf_counter() - started) * 1000.0,
            rows_in=int(rows_in), rows_out=int(rows_out), detail=detail,
        ))

    def note_memory(self, nbytes: int) -> None:
        self.peak = max(self.peak, int(nbytes))

    def run(self) -> Tuple[ResultSet, ExecutionStats]:
        started = time.perf_counter()
        self._subqueries()
        agg = self.plan.aggregate
        inter = None if agg is not None and agg.scan_fused else self._joined()
        if agg is None:
            frame = self._frame(inter)
        else:
            frame = self._aggregate(inter)
        rows, keys = self._project(frame)
        result = self._finish(rows, keys)
        stats = ExecutionStats(
            operators=self.operators,
            total_ms=(time.perf_counter() - started) * 1000.0,
            peak_memory_bytes=self.peak,
            output_rows=result.row_count,
        )
        return result, stats

    def _frame(self, inter: Dict[str, np.ndarray]) -> Frame:
        length = int(len(next(iter(inter.values())))) if inter else 0
        return Frame(tables=self.bound, positions=inter, length=length, subqueries=self.subqueries)

    # -------------------------------------------------------------------
    # subqueries
    # -------------------------------------------------------------------

    def _subqueries(self) -> None:
        for ordinal in sorted(self.plan.subplans):
            sub = _Execution(self.plan.subplans[ordinal], self.tables, self.deadline)
            result, stats = sub.run()
            values = [row[0] for row in result.rows]
            self.subqueries[ordinal] = SubqueryKeys(
                frozenset(v for v in values if v is not None), any(v is None for v in values),
            )
            for o in stats.operators:
                self.operators.append(o.model_copy(update={"op": f"subquery[{ordinal}].{o.op}"}))
            self.note_memory(stats.peak_memory_bytes)

    # -------------------------------------------------------------------
    # scan + join
    # -------------------------------------------------------------------

    def _scan(self, alias: str) -> np.ndarray:
        spec = self.plan.scans[alias]
        table = self.tables[spec.table]
        started = time.perf_counter()
        if self.q.constant_false:
            result = ScanResult(positions=_EMPTY)
        else:
            candidates = index_candidates(table, spec.conjuncts, spec.index_column) if spec.index_filters else None
            result = scan_table(
                table, alias, spec.conjuncts, use_zone_maps=spec.use_zone_maps,
                morsel_size=self.plan.morsel_size, thread_count=self.plan.thread_count,
                deadline=self.deadline, subqueries=self.subqueries, candidates=candidates,
            )
        self.record(self.scan_order.index(alias), "scan_filter", started, table.row_count, result.row_count,
                    table=spec.table, access=spec.access.value, blocks_total=result.blocks_total,
                    blocks_skipped=result.blocks_skipped, rows_evaluated=result.rows_evaluated)
        return result.positions

    def _joined(self) -> Dict[str, np.ndarray]:
        inter = {self.plan.base: self._scan(self.plan.base)}
        for i, join in enumerate(self.plan.joins):
            positions = self._scan(join.alias)
            inter = self._join(i, join, inter, positions)
            self.note_memory(sum(p.nbytes for p in inter.values()))
            self.deadline.check()
        return inter

    def _join(self, i: int, join: JoinSpec, inter: Dict[str, np.ndarray],
              positions: np.ndarray) -> Dict[str, np.ndarray]:
        build_node = len(self.scan_order) + 2 * i
        probe_node = build_node + 1
        n_left = int(len(next(iter(inter.values()))))
        n_right = int(len(positions))

        if join.key is None:
            started = time.perf_counter()
            self.deadline.check()
            left_idx = np.repeat(np.arange(n_left, dtype=np.int64), n_right)
            right_idx = np.tile(np.arange(n_right, dtype=np.int64), n_left)
            self.record(build_node, "build_join", started, n_right, n_right, cartesian=True)
            started = time.perf_counter()
        else:
            outer = join.key.other_side(join.alias)
            inner = join.key.side_for(join.alias)
            outer_vec = column_vec(self.bound[outer.table].column(outer.name), inter[outer.table])
            inner_vec = column_vec(self.tables[join.table].column(inner.name), positions)
            lk, rk = join_keys(outer_vec, inner_vec)
            # NULL keys never match
            lvalid, rvalid = ~outer_vec.null_mask(), ~inner_vec.null_mask()
            if join.role == "build":
                ht = self._build(build_node, rk, rvalid)
                started = time.perf_counter()
                left_idx, right_idx = self._probe(ht, lk, lvalid)
            else:
                ht = self._build(build_node, lk, lvalid)
                started = time.perf_counter()
                right_idx, left_idx = self._probe(ht, rk, rvalid)
            self.note_memory(ht.memory_bytes + sum(p.nbytes for p in inter.values()))

        out = {alias: pos[left_idx] for alias, pos in inter.items()}
        out[join.alias] = positions[right_idx]
        matched = int(len(left_idx))
        if join.post_filters and matched:
            frame = self._frame(out)
            keep = np.ones(matched, dtype=bool)
            for f in join.post_filters:
                keep &= predicate_mask(f, frame)
            out = {alias: pos[keep] for alias, pos in out.items()}
        probe_in = n_right if join.role == "probe" else n_left
        self.record(probe_node, "probe_join", started, probe_in, len(out[join.alias]),
                    matched=matched, role=join.role, post_filters=len(join.post_filters))
        return out

    def _build(self, node: int, keys: np.ndarray, valid: np.ndarray) -> JoinHashTable:
        started = time.perf_counter()
        rows = np.flatnonzero(valid).astype(np.int64)
        ht = JoinHashTable.build(keys[rows], rows, load_factor_cap=self.plan.load_factor_cap,
                                 seed=self.plan.hash_seed)
        self.record(node, "build_join", started, len(keys), ht.count, capacity=ht.capacity,
                    load_factor=round(ht.load_factor, 4), memory_bytes=ht.memory_bytes)
        return ht

    def _probe(self, ht: JoinHashTable, keys: np.ndarray, valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        selection = np.flatnonzero(valid).astype(np.int64)
        morsels = make_morsels(len(selection), self.plan.morsel_size)
        parts = run_morsels(
            lambda _tid, m: ht.probe(keys, selection[m.start:m.end], self.plan.prefetch_batch),
            morsels, self.plan.thread_count, self.deadline,
        )
        if not parts:
            return _EMPTY, _EMPTY
        return (np.concatenate([p[0] for p in parts]).astype(np.int64),
                np.concatenate([p[1] for p in parts]).astype(np.int64))

    # -------------------------------------------------------------------
    # aggregation
    # -------------------------------------------------------------------

    def _key_columns(self, frame: Optional[Frame]) -> List[KeyColumn]:
        out = []
        for key in self.q.group_keys:
            if isinstance(key, ColumnRef):
                out.append(table_column_key(self.bound[key.table], key.name))
            elif key.type.is_string:
                out.append(expression_key(evaluate(key, frame)))
            else:
                out.append(KeyColumn(key.type))
        return out

    def _specs(self, frame: Optional[Frame]) -> List[AggSpec]:
        specs = []
        for a, spec in zip(self.q.aggregates, agg_specs(self.q)):
            if a.func in ("min", "max") and a.arg is not None and a.arg.type.is_string:
                if isinstance(a.arg, ColumnRef):
                    order = ValueOrder.for_vector(self.bound[a.arg.table].column(a.arg.name))
                else:
                    order = ValueOrder.for_values(evaluate(a.arg, frame))
                spec = replace(spec, order=order)
            specs.append(spec)
        return specs

    def _batch(self, frame: Frame, key_columns: List[KeyColumn], specs: List[AggSpec]) -> Batch:
        n = frame.length
        keys = encode_keys(key_columns, [evaluate(k, frame) for k in self.q.group_keys], n)
        inputs = [agg_input(s.func, evaluate(a.arg, frame) if a.arg is not None else None, n, s.order)
                  for a, s in zip(self.q.aggregates, specs)]
        return Batch(keys=keys, inputs=inputs)

    def _aggregate(self, inter: Optional[Dict[str, np.ndarray]]) -> Frame:
        agg = self.plan.aggregate
        q = self.q
        node = self.plan.node("aggregate").id
        full = self._frame(inter) if inter is not None else None
        staged = not agg.fused
        key_columns = self._key_columns(full)
        specs = self._specs(full)
        started = time.perf_counter()
        scans: List[ScanResult] = []

        if agg.scan_fused:
            alias = self.plan.base
            spec = self.plan.scans[alias]
            table = self.tables[spec.table]

            def produce(m):
                res = ScanResult(positions=_EMPTY) if q.constant_false else scan_filter(
                    table, alias, spec.conjuncts, m, spec.use_zone_maps, self.subqueries)
                scans.append(res)
                frame = Frame(tables=self.bound, positions={alias: res.positions}, length=res.row_count,
                              subqueries=self.subqueries)
                return self._batch(frame, key_columns, specs)

            morsels = make_morsels(table.row_count, self.plan.morsel_size)
            rows_in = None
        elif agg.ordered_index is not None:
            produce = morsels = None
            rows_in = full.length
        elif staged:
            batch = self._batch(full, key_columns, specs)

            def produce(m):
                return Batch(keys=batch.keys[m.start:m.end],
                             inputs=[AggInput(None if x.values is None else x.values[m.start:m.end],
                                              x.valid[m.start:m.end]) for x in batch.inputs])

            morsels = make_morsels(full.length, self.plan.morsel_size)
            rows_in = full.length
        else:
            def produce(m):
                frame = Frame(tables=self.bound, positions={a: p[m.start:m.end] for a, p in inter.items()},
                              length=m.size, subqueries=self.subqueries)
                return self._batch(frame, key_columns, specs)

            morsels = make_morsels(full.length, self.plan.morsel_size)
            rows_in = full.length

        if agg.ordered_index is not None:
            alias = self.plan.base
            table = self.bound[alias]

            def gather(pos):
                frame = Frame(tables=self.bound, positions={alias: pos}, length=len(pos),
                              subqueries=self.subqueries)
                return self._batch(frame, key_columns, specs)

            state = aggregate_ordered(table.indexes[agg.ordered_index], inter[alias], table.row_count,
                                      gather, specs, self.deadline)
        else:
            state = aggregate(produce, morsels, specs, key_columns, agg.strategy,
                              thread_count=self.plan.thread_count, cache_line_bytes=self.plan.cache_line_bytes,
                              seed=self.plan.hash_seed, load_factor_cap=self.plan.load_factor_cap,
                              deadline=self.deadline)

        if agg.scan_fused:
            rows_in = sum(s.row_count for s in scans)
            table = self.bound[self.plan.base]
            self.record(0, "scan_filter", started, table.row_count, rows_in, table=table.name,
                        access=self.plan.scans[self.plan.base].access.value, fused=True,
                        blocks_total=sum(s.blocks_total for s in scans),
                        blocks_skipped=sum(s.blocks_skipped for s in scans),
                        rows_evaluated=sum(s.rows_evaluated for s in scans))

        if not q.group_keys and state.group_count == 0:
            # a global aggregate always yields one row
            state = GroupedState(keys=np.zeros((1, 1), dtype=np.int64),
                                 acc=Accumulators(AccumulatorLayout(specs), 1), strategy=state.strategy,
                                 threads_used=state.threads_used, memory_bytes=state.memory_bytes)

        values = finalize(state, specs)
        precomputed: Dict[object, Vec] = {}
        for j, key in enumerate(q.group_keys):
            precomputed[key] = key_columns[j].decode(state.keys[:, j])
        for a, v in zip(q.aggregates, values):
            precomputed[a] = v
        groups = state.group_count
        if q.having is not None and groups:
            frame = Frame(tables={}, positions={}, length=groups, precomputed=precomputed,
                          subqueries=self.subqueries)
            keep = np.flatnonzero(predicate_mask(q.having, frame))
            precomputed = {e: v.take(keep) for e, v in precomputed.items()}
            groups = int(keep.shape[0])
        self.note_memory(state.memory_bytes)
        self.record(node, "aggregate", started, rows_in, groups, strategy=state.strategy,
                    groups=state.group_count, threads=state.threads_used, memory_bytes=state.memory_bytes,
                    pipeline="staged" if staged else "fused")
        return Frame(tables={}, positions={}, length=groups, precomputed=precomputed, subqueries=self.subqueries)

    # -------------------------------------------------------------------
    # output
    # -------------------------------------------------------------------

    def _project(self, frame: Frame) -> Tuple[List[tuple], List[tuple]]:
        started = time.perf_counter()
        q = self.q
        n = frame.length
        rows: List[tuple] = []
        keys: List[tuple] = [()] * n
        if n:
            columns = [to_python(evaluate(o.expr, frame)) for o in q.outputs]
            rows = [tuple(normalize_cell(v, o.type) for v, o in zip(cells, q.outputs)) for cells in zip(*columns)]
            if q.order_by:
                keys = list(zip(*[to_python(evaluate(o.expr, frame)) for o in q.order_by]))
        self.record(self.plan.node("project").id, "project", started, n, len(rows))
        return rows, keys

    def _finish(self, rows: List[tuple], keys: List[tuple]) -> ResultSet:
        started = time.perf_counter()
        result = finish_result(self.q, rows, keys)
        node = self.plan.node("sort") or self.plan.node("limit")
        if node is not None:
            self.record(node.id, node.op, started, len(rows), result.row_count)
        return result
