"""
Filter selectivity estimates over one table, by full scan or seeded sample.
"""
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional

import numpy as np

from querysynth.errors import KernelContractError
from querysynth.models.profile import SelectivityEstimate
from querysynth.reference.evaluator import RowContext, evaluate, is_true
from querysynth.sql.ast import Expr, InSubquery, column_refs
from querysynth.sql.binder import BoundQuery
from querysynth.sql.printer import expr_sql
from querysynth.storage.encoding import decode_value
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplePolicy:
    """n = None means full scan."""
    n: Optional[int] = None
    seed: int = 0

    @property
    def full_scan(self) -> bool:
        return self.n is None


FULL_SCAN = SamplePolicy()


def sample_positions(row_count: int, policy: SamplePolicy) -> np.ndarray:
    """Fixed-seed uniform positions without replacement (all rows when n >= row_count)."""
    if policy.full_scan or policy.n >= row_count:
        return np.arange(row_count, dtype=np.int64)
    rng = np.random.default_rng(policy.seed)
    return np.sort(rng.choice(row_count, size=policy.n, replace=False)).astype(np.int64)


def estimate_selectivity(predicate: Expr, table: ColumnarTable, policy: SamplePolicy = FULL_SCAN,
                         alias: Optional[str] = None) -> SelectivityEstimate:
    refs = column_refs(predicate)
    aliases = {r.table for r in refs}
    if len(aliases) > 1:
        raise KernelContractError("selectivity predicates must reference a single table")
    alias = alias or (next(iter(aliases)) if aliases else table.name)
    method = "full_scan" if policy.full_scan else "sample"
    n = table.row_count
    if n == 0:
        return SelectivityEstimate(table=table.name, predicate=expr_sql(predicate), estimate=0.0,
                                   sample_size=0, method=method)

    positions = sample_positions(n, policy)
    names = sorted({r.name for r in refs})
    vectors = {name: table.column(name) for name in names}
    hits = 0
    for pos in positions.tolist():
        values = {(alias, name): decode_value(vec, pos) for name, vec in vectors.items()}
        if is_true(evaluate(predicate, RowContext(values))):
            hits += 1
    size = int(positions.shape[0])
    return SelectivityEstimate(table=table.name, predicate=expr_sql(predicate),
                               estimate=hits / size, sample_size=size, method=method)


def query_selectivities(query: BoundQuery, tables: Mapping[str, ColumnarTable],
                        policy: SamplePolicy = FULL_SCAN,
                        warnings: Optional[List[str]] = None) -> List[SelectivityEstimate]:
    """One estimate per single-table conjunct; filters on tables that are not loaded become warnings."""
    out = []
    for alias, conjuncts in query.table_conjuncts.items():
        if not conjuncts:
            continue
        name = query.base_table(alias)
        table = tables.get(name)
        if table is None:
            if warnings is not None:
                warnings.append(f"{query.query_id or 'query'}: filtered table {name} not in the catalog")
            continue
        for conjunct in conjuncts:
            if _has_subquery(conjunct):
                continue
            out.append(estimate_selectivity(conjunct, table, policy, alias=alias))
    return out


def _has_subquery(e: Expr) -> bool:
    return any(isinstance(n, InSubquery) for n in e.walk())
