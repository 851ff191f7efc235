"""
Iteration-0 decisions: a deterministic heuristic plan that needs no agent.
"""
import logging
from typing import Dict, List, Mapping, Optional

from querysynth.models.plan import AccessKind, AccessPath, JoinStep, PlanDecisionSet
from querysynth.models.profile import WorkloadProfile
from querysynth.sql.binder import BoundQuery
from querysynth.sql.printer import expr_sql
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)


def estimated_rows(query: BoundQuery, profile: WorkloadProfile) -> Optional[Dict[str, float]]:
    """alias -> row_count x product of its conjuncts' selectivities; None without stats."""
    estimates = {(e.table, e.predicate): e.estimate for e in profile.selectivities.get(query.query_id, [])}
    out: Dict[str, float] = {}
    for alias, table in query.tables.items():
        tp = profile.tables.get(table)
        if tp is None:
            return None
        rows = float(tp.row_count)
        for conjunct in query.table_conjuncts.get(alias, ()):
            rows *= estimates.get((table, expr_sql(conjunct)), 1.0)
        out[alias] = rows
    return out


def _connected(query: BoundQuery, alias: str, bound: set) -> bool:
    return any(alias in j.aliases and (set(j.aliases) - {alias}) <= bound for j in query.join_conditions)


def default_join_order(query: BoundQuery, profile: Optional[WorkloadProfile]) -> List[JoinStep]:
    aliases = list(query.tables)
    sizes = estimated_rows(query, profile) if profile is not None else None
    if sizes is None:
        order = aliases
        return [JoinStep(table=a, role="base" if i == 0 else "build") for i, a in enumerate(order)]

    # greedy: smallest first, then the smallest table joinable to what is already bound
    rank = {a: i for i, a in enumerate(aliases)}
    remaining = sorted(aliases, key=lambda a: (sizes[a], rank[a]))
    order = [remaining.pop(0)]
    bound = set(order)
    while remaining:
        joinable = [a for a in remaining if _connected(query, a, bound)]
        nxt = (joinable or remaining)[0]
        remaining.remove(nxt)
        order.append(nxt)
        bound.add(nxt)

    steps = [JoinStep(table=order[0], role="base")]
    intermediate = sizes[order[0]]
    for alias in order[1:]:
        # the smaller input is hashed
        steps.append(JoinStep(table=alias, role="build" if sizes[alias] < intermediate else "probe"))
        intermediate = max(intermediate, sizes[alias])
    return steps


def default_decisions(query: BoundQuery, profile: Optional[WorkloadProfile] = None,
                      tables: Optional[Mapping[str, ColumnarTable]] = None) -> PlanDecisionSet:
    access = {}
    for alias, table_name in query.tables.items():
        table = (tables or {}).get(table_name)
        has_maps = table is None or bool(table.zone_maps)
        access[alias] = AccessPath(kind=AccessKind.ZONE_PRUNED_SCAN if has_maps else AccessKind.FULL_SCAN)
    return PlanDecisionSet(
        join_order=default_join_order(query, profile),
        access_paths=access,
        aggregation="auto",
        thread_count=profile.hardware.core_count if profile is not None else None,
        subquery_decisions={
            i: default_decisions(sub, profile, tables) for i, sub in enumerate(query.subqueries)
        },
    )
