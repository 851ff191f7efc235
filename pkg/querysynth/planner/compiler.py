"""
Deterministic compilation: BoundQuery + validated PlanDecisionSet -> PhysicalPlan.

Compilation is pure (no data is read beyond zone maps and column dictionaries),
so any number of plans may be compiled concurrently.
"""
import logging
from dataclasses import replace
from typing import List, Mapping, Optional

import numpy as np

from querysynth.config import KernelSettings, kernel_settings
from querysynth.errors import KernelContractError
from querysynth.kernels.aggregate import AccumulatorLayout, AggSpec
from querysynth.kernels.scan import describe_filters
from querysynth.kernels.strategy import (
    KEY_BYTES, AggregationStrategy, StrategyKind, forced_strategy, select_aggregation_strategy,
)
from querysynth.models.plan import AccessKind, PlanDecisionSet
from querysynth.models.profile import HardwareProfile, WorkloadProfile
from querysynth.planner.defaults import default_decisions, estimated_rows
from querysynth.planner.physical import (
    AggregateSpec, JoinSpec, PhysicalPlan, ScanSpec, build_nodes,
)
from querysynth.planner.validate import (
    dense_group_domain, filter_columns, ordered_aggregation_column, parse_index_id,
)
from querysynth.sql import types as T
from querysynth.sql.ast import ColumnRef, Compare, referenced_tables
from querysynth.sql.binder import BoundQuery
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)


def compile_plan(query: BoundQuery, decisions: PlanDecisionSet, tables: Mapping[str, ColumnarTable],
                 hardware: HardwareProfile, profile: Optional[WorkloadProfile] = None,
                 settings: Optional[KernelSettings] = None) -> PhysicalPlan:
    settings = settings or kernel_settings()
    threads = decisions.thread_count or hardware.core_count
    for alias, table_name in query.tables.items():
        if table_name not in tables:
            raise KernelContractError(f"table '{table_name}' is not loaded")

    scans = {alias: _scan_spec(query, alias, decisions, tables) for alias in query.tables}
    order = decisions.join_order
    base = order[0].table
    joins = _join_specs(query, order)
    aggregate = None
    if query.is_aggregate:
        aggregate = _aggregate_spec(query, decisions, tables, hardware, profile, scans, joins, threads,
                                    settings.load_factor_cap)

    subplans = {}
    for ordinal, sub in enumerate(query.subqueries):
        sub_decisions = decisions.subquery_decisions.get(ordinal) or default_decisions(sub, None, tables)
        subplans[ordinal] = compile_plan(sub, sub_decisions, tables, hardware, profile, settings)

    plan = PhysicalPlan(
        query=query,
        decisions=decisions,
        scans=scans,
        joins=joins,
        base=base,
        aggregate=aggregate,
        thread_count=threads,
        prefetch_batch=decisions.prefetch_batch,
        morsel_size=settings.morsel_size,
        load_factor_cap=settings.load_factor_cap,
        hash_seed=settings.hash_seed,
        cache_line_bytes=hardware.cache_line_bytes,
        subplans=subplans,
    )
    plan.nodes = build_nodes(plan)
    logger.debug("compiled %s:\n%s", query.query_id or "query", plan.render())
    return plan


# ===================================================================
# SCANS / JOINS
# ===================================================================

def _scan_spec(query: BoundQuery, alias: str, decisions: PlanDecisionSet,
               tables: Mapping[str, ColumnarTable]) -> ScanSpec:
    table_name = query.base_table(alias)
    table = tables[table_name]
    conjuncts = tuple(query.table_conjuncts.get(alias, ()))
    path = decisions.access_for(alias)
    spec = ScanSpec(alias=alias, table=table_name, conjuncts=conjuncts, access=path.kind,
                    prunable=describe_filters(table, conjuncts))
    if path.kind == AccessKind.INDEX_POSTINGS:
        parsed = parse_index_id(path.index or "")
        if parsed is None or path.index not in table.indexes:
            raise KernelContractError(f"index {path.index} is not materialized")
        spec.index = path.index
        spec.index_column = parsed[1]
        spec.index_filters = parsed[1] in filter_columns(query, alias)
    return spec


def _join_specs(query: BoundQuery, order) -> List[JoinSpec]:
    bound = {order[0].table}
    pending_joins = list(query.join_conditions)
    pending_residual = list(query.residual)
    out = []
    for step in order[1:]:
        alias = step.table
        bound.add(alias)
        ready = [j for j in pending_joins if set(j.aliases) <= bound]
        pending_joins = [j for j in pending_joins if j not in ready]
        key = next((j for j in ready if alias in j.aliases), None)
        post = [j for j in ready if j is not key]
        residual = [r for r in pending_residual if referenced_tables(r) <= bound]
        pending_residual = [r for r in pending_residual if r not in residual]

        filters = tuple(Compare("=", j.left, j.right, T.BOOL) for j in post) + tuple(residual)
        out.append(JoinSpec(alias=alias, table=query.base_table(alias), role=step.role, key=key,
                            post_filters=filters))
    return out


# ===================================================================
# AGGREGATION
# ===================================================================

def agg_specs(query: BoundQuery) -> List[AggSpec]:
    return [AggSpec(func=a.func, result_type=a.type, arg_type=a.arg.type if a.arg is not None else None)
            for a in query.aggregates]


def _estimate_groups(query: BoundQuery, tables: Mapping[str, ColumnarTable],
                     profile: Optional[WorkloadProfile], input_rows: float) -> int:
    if not query.group_keys:
        return 1
    estimate = 1
    for key in query.group_keys:
        if not isinstance(key, ColumnRef):
            return max(int(input_rows), 1)
        table_name = query.base_table(key.table)
        stats = profile.column_stats(table_name, key.name) if profile is not None else None
        if stats is not None:
            ndv = stats.ndv + (1 if stats.null_count else 0)
        else:
            vector = tables[table_name].column(key.name)
            ndv = int(np.unique(vector.data).shape[0]) + (1 if vector.nulls is not None else 0)
        estimate *= max(ndv, 1)
    return max(1, int(min(estimate, max(input_rows, 1))))


def _input_rows(query: BoundQuery, tables, profile) -> float:
    sizes = estimated_rows(query, profile) if profile is not None else None
    if sizes is None:
        sizes = {a: float(tables[t].row_count) for a, t in query.tables.items()}
    return max(sizes.values()) if sizes else 0.0


def _aggregate_spec(query: BoundQuery, decisions: PlanDecisionSet, tables, hardware: HardwareProfile,
                    profile, scans, joins, threads: int, cap: float) -> AggregateSpec:
    specs = agg_specs(query)
    width = max(len(query.group_keys), 1)
    state_bytes = AccumulatorLayout(specs).state_bytes + KEY_BYTES * width
    groups = _estimate_groups(query, tables, profile, _input_rows(query, tables, profile))
    fused = decisions.fused()

    staged_reason = None
    if fused:
        for key in query.group_keys:
            if key.type.is_string and not isinstance(key, ColumnRef):
                staged_reason = "computed string key needs the full input"
        for a in query.aggregates:
            if a.func in ("min", "max") and a.arg is not None and a.arg.type.is_string \
                    and not isinstance(a.arg, ColumnRef):
                staged_reason = "MIN/MAX over a computed string needs the full input"
        if staged_reason:
            fused = False

    single = len(query.tables) == 1
    base_scan = scans[next(iter(query.tables))] if single else None

    ordered_index = None
    if single and base_scan.index and base_scan.index_column == ordered_aggregation_column(query, base_scan.alias):
        ordered_index = base_scan.index

    strategy: Optional[AggregationStrategy] = None
    if ordered_index is None:
        domain = dense_group_domain(query, tables)
        if decisions.aggregation == "auto":
            strategy = select_aggregation_strategy(groups, state_bytes, hardware, threads, domain, cap)
        else:
            strategy = forced_strategy(StrategyKind(decisions.aggregation), groups, state_bytes, hardware,
                                       domain, cap)
        if strategy.kind == StrategyKind.DIRECT_ARRAY:
            # accumulator rows are padded to whole cache lines
            stride = AccumulatorLayout(specs, hardware.cache_line_bytes).stride_bytes
            strategy = replace(strategy, stride_bytes=stride)

    scan_fused = fused and single and ordered_index is None and not base_scan.index_filters
    return AggregateSpec(
        aggregates=tuple(query.aggregates),
        group_keys=tuple(query.group_keys),
        strategy=strategy,
        fused=fused,
        ordered_index=ordered_index,
        staged_reason=staged_reason,
        scan_fused=scan_fused,
        estimated_groups=groups,
        state_bytes=state_bytes,
    )

