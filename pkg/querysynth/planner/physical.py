"""
PhysicalPlan: compiled operator pipeline with bound kernel parameters, and its
human-readable rendering.

The operator DAG is a left-deep chain

    scan_filter* -> (build_join | probe_join)* -> aggregate? -> project -> sort? -> limit?

with one nested plan per IN-subquery feeding the predicates that reference it.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from querysynth.kernels.strategy import AggregationStrategy
from querysynth.models.plan import AccessKind, PlanDecisionSet
from querysynth.sql.ast import AggCall, Expr
from querysynth.sql.binder import BoundQuery, EquiJoin
from querysynth.sql.printer import expr_sql


@dataclass
class ScanSpec:
    alias: str
    table: str
    conjuncts: Tuple[Expr, ...]
    access: AccessKind
    index: Optional[str] = None          # index id for index_postings
    index_column: Optional[str] = None
    index_filters: bool = False          # postings narrow the scan (equality / IN conjunct)
    prunable: Dict[str, str] = field(default_factory=dict)

    @property
    def use_zone_maps(self) -> bool:
        return self.access == AccessKind.ZONE_PRUNED_SCAN


@dataclass
class JoinSpec:
    alias: str
    table: str
    role: str                             # build: new table hashed; probe: intermediate hashed
    key: Optional[EquiJoin]               # None: cartesian product
    post_filters: Tuple[Expr, ...] = ()


@dataclass
class AggregateSpec:
    aggregates: Tuple[AggCall, ...]
    group_keys: Tuple[Expr, ...]
    strategy: Optional[AggregationStrategy]   # None: ordered over index postings
    fused: bool
    ordered_index: Optional[str] = None
    staged_reason: Optional[str] = None
    scan_fused: bool = False              # the single scan runs inside the aggregation morsels
    estimated_groups: int = 0
    state_bytes: int = 0


@dataclass
class PlanNode:
    id: int
    op: str
    inputs: List[int]
    label: str


@dataclass
class PhysicalPlan:
    query: BoundQuery
    decisions: PlanDecisionSet
    scans: Dict[str, ScanSpec]
    joins: List[JoinSpec]
    base: str
    aggregate: Optional[AggregateSpec]
    thread_count: int
    prefetch_batch: int
    morsel_size: int
    load_factor_cap: float
    hash_seed: int
    cache_line_bytes: int
    subplans: Dict[int, "PhysicalPlan"] = field(default_factory=dict)
    nodes: List[PlanNode] = field(default_factory=list)

    @property
    def query_id(self) -> str:
        return self.query.query_id

    def node(self, op: str) -> Optional[PlanNode]:
        return next((n for n in self.nodes if n.op == op), None)

    def strategies(self) -> List[str]:
        """Aggregation strategies in this plan and its subplans (report column)."""
        out = []
        if self.aggregate is not None:
            out.append(self.aggregate.strategy.kind.value if self.aggregate.strategy else "ordered_index")
        for ordinal in sorted(self.subplans):
            out.extend(self.subplans[ordinal].strategies())
        return out

    def indexes_used(self) -> List[str]:
        out = [s.index for s in self.scans.values() if s.index]
        for ordinal in sorted(self.subplans):
            out.extend(self.subplans[ordinal].indexes_used())
        return sorted(set(out))

    def render(self, indent: str = "") -> str:
        lines = [f"{indent}plan {self.query_id or 'query'}: threads={self.thread_count} "
                 f"morsel={self.morsel_size} prefetch={self.prefetch_batch} "
                 f"load_factor_cap={self.load_factor_cap}"]
        for n in self.nodes:
            src = f" <- {', '.join('#' + str(i) for i in n.inputs)}" if n.inputs else ""
            lines.append(f"{indent}  #{n.id} {n.op} {n.label}{src}")
        for ordinal in sorted(self.subplans):
            lines.append(f"{indent}  subquery[{ordinal}]:")
            lines.append(self.subplans[ordinal].render(indent + "    "))
        return "\n".join(lines)


# ===================================================================
# NODE LIST
# ===================================================================

def _exprs(items) -> str:
    return ", ".join(expr_sql(e) for e in items) or "-"


def build_nodes(plan: PhysicalPlan) -> List[PlanNode]:
    nodes: List[PlanNode] = []

    def add(op: str, inputs: List[int], label: str) -> int:
        nodes.append(PlanNode(len(nodes), op, inputs, label))
        return len(nodes) - 1

    scan_node: Dict[str, int] = {}
    agg = plan.aggregate
    for alias in [plan.base] + [j.alias for j in plan.joins]:
        s = plan.scans[alias]
        access = s.access.value + (f"({s.index})" if s.index else "")
        prune = ", ".join(f"{c}:{k}" for c, k in sorted(s.prunable.items())) if s.use_zone_maps else ""
        label = f"{s.table} as {alias} [{access}] filters: {_exprs(s.conjuncts)}"
        if prune:
            label += f" prunes on {prune}"
        if agg is not None and agg.scan_fused:
            label += " (fused into aggregate)"
        scan_node[alias] = add("scan_filter", [], label)

    current = scan_node[plan.base]
    for j in plan.joins:
        key = f"{j.key.left.qualified} = {j.key.right.qualified}" if j.key else "cartesian"
        post = f" post-filters: {_exprs(j.post_filters)}" if j.post_filters else ""
        if j.role == "build":
            build = add("build_join", [scan_node[j.alias]], f"hash {j.alias} on {key}")
            current = add("probe_join", [current, build], f"probe with intermediate; {key}{post}")
        else:
            build = add("build_join", [current], f"hash intermediate on {key}")
            current = add("probe_join", [scan_node[j.alias], build], f"probe with {j.alias}; {key}{post}")

    q = plan.query
    if agg is not None:
        how = agg.strategy.describe() if agg.strategy is not None else f"ordered_index({agg.ordered_index})"
        pipeline = "fused" if agg.fused else "staged"
        if agg.staged_reason:
            pipeline += f" ({agg.staged_reason})"
        having = f" having: {expr_sql(q.having)}" if q.having is not None else ""
        current = add("aggregate", [current],
                      f"{how} keys: {_exprs(agg.group_keys)} aggs: {_exprs(agg.aggregates)} "
                      f"pipeline={pipeline}{having}")
    current = add("project", [current], ", ".join(q.output_names))
    if q.order_by:
        keys = ", ".join(f"{expr_sql(o.expr)} {'desc' if o.desc else 'asc'}" for o in q.order_by)
        current = add("sort", [current], f"{keys} (nulls last)")
    if q.limit is not None:
        add("limit", [current], str(q.limit))
    return nodes
