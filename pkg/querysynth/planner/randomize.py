"""
Random decision sets over everything the validator accepts for a query.

Used to check that decisions change performance only: any set produced here
must give the oracle's result.
"""
from typing import Mapping

import numpy as np

from querysynth.models.plan import AccessKind, AccessPath, JoinStep, PlanDecisionSet
from querysynth.planner.validate import dense_group_domain, filter_columns, ordered_aggregation_column
from querysynth.sql.binder import BoundQuery
from querysynth.storage.table import ColumnarTable

PREFETCH_CHOICES = (1, 7, 64, 1024)


def random_decisions(query: BoundQuery, tables: Mapping[str, ColumnarTable],
                     rng: np.random.Generator, max_threads: int = 4) -> PlanDecisionSet:
    aliases = list(query.tables)
    order = [aliases[i] for i in rng.permutation(len(aliases))]
    join_order = [JoinStep(table=order[0], role="base")]
    join_order += [JoinStep(table=a, role=str(rng.choice(["build", "probe"]))) for a in order[1:]]

    access = {}
    for alias, table_name in query.tables.items():
        table = tables[table_name]
        choices = [AccessPath(kind=AccessKind.FULL_SCAN), AccessPath(kind=AccessKind.ZONE_PRUNED_SCAN)]
        usable = filter_columns(query, alias) | {ordered_aggregation_column(query, alias)}
        choices += [AccessPath(kind=AccessKind.INDEX_POSTINGS, index=key)
                    for key, idx in sorted(table.indexes.items()) if idx.column in usable]
        access[alias] = choices[int(rng.integers(len(choices)))]

    strategies = ["auto"]
    if query.is_aggregate:
        strategies += ["partitioned_hash", "shared_cas"]
        if dense_group_domain(query, tables) is not None:
            strategies.append("direct_array")

    return PlanDecisionSet(
        join_order=join_order,
        access_paths=access,
        aggregation=str(rng.choice(strategies)),
        fusion={"main": str(rng.choice(["fused", "staged"]))},
        thread_count=int(rng.integers(1, max_threads + 1)),
        prefetch_batch=int(rng.choice(PREFETCH_CHOICES)),
        subquery_decisions={
            i: random_decisions(sub, tables, rng, max_threads) for i, sub in enumerate(query.subqueries)
        },
    )
