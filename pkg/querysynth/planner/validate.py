"""
Guardrail between agent output and the compiler.

Every violation becomes a Diagnostic with a machine-readable code. A malformed
join order rejects the whole decision set; any other bad field is replaced by its
default (or dropped) and compilation proceeds.
"""
import logging
from typing import Dict, List, Mapping, Optional, Tuple

from querysynth.kernels.groupkeys import table_column_key
from querysynth.kernels.strategy import dense_domain_ok
from querysynth.models.catalog import Catalog, TypeKind
from querysynth.models.plan import (
    MAIN_PIPELINE, AccessKind, AccessPath, Diagnostic, JoinStep, PlanDecisionSet, ValidationResult,
)
from querysynth.sql.ast import ColumnRef, Compare, InList, Literal
from querysynth.sql.binder import BoundQuery
from querysynth.storage.index import IndexKind, index_id
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)

MAX_THREADS = 256


# ===================================================================
# APPLICABILITY HELPERS (shared with the compiler)
# ===================================================================

def dense_group_domain(query: BoundQuery, tables: Mapping[str, ColumnarTable]) -> Optional[List[int]]:
    """Per-key dense domain sizes when every group key is a bounded stored column."""
    if not query.group_keys:
        return [1]
    sizes = []
    for key in query.group_keys:
        if not isinstance(key, ColumnRef):
            return None
        table = tables.get(query.base_table(key.table))
        if table is None:
            return None
        column = table_column_key(table, key.name)
        if not column.dense:
            return None
        sizes.append(column.dense_size)
    return sizes if dense_domain_ok(sizes) else None


def filter_columns(query: BoundQuery, alias: str) -> set:
    """Columns of `alias` tested by an equality or IN-list against constants."""
    out = set()
    for c in query.table_conjuncts.get(alias, ()):
        if isinstance(c, Compare) and c.op == "=":
            for col, other in ((c.left, c.right), (c.right, c.left)):
                if isinstance(col, ColumnRef) and isinstance(other, Literal):
                    out.add(col.name)
        elif isinstance(c, InList) and not c.negated and isinstance(c.operand, ColumnRef) \
                and all(isinstance(i, Literal) for i in c.items):
            out.add(c.operand.name)
    return out


def ordered_aggregation_column(query: BoundQuery, alias: str) -> Optional[str]:
    """The grouping column when `alias` alone feeds a single-column GROUP BY."""
    if len(query.tables) != 1 or not query.is_aggregate or len(query.group_keys) != 1:
        return None
    key = query.group_keys[0]
    if isinstance(key, ColumnRef) and key.table == alias:
        return key.name
    return None


def parse_index_id(text: str) -> Optional[Tuple[str, str, str]]:
    parts = text.split(".")
    if len(parts) != 3 or parts[2] not in {k.value for k in IndexKind}:
        return None
    return parts[0], parts[1], parts[2]


# ===================================================================
# VALIDATION
# ===================================================================

def validate_decisions(decisions: PlanDecisionSet, query: BoundQuery, catalog: Catalog,
                       tables: Optional[Mapping[str, ColumnarTable]] = None,
                       prefix: str = "") -> ValidationResult:
    tables = tables or {}
    diags: List[Diagnostic] = []

    def diag(code: str, field: str, message: str, action: str = "replaced") -> None:
        diags.append(Diagnostic(code=code, field=prefix + field, message=message, action=action))

    join_order = _check_join_order(decisions.join_order, query, diag)
    if join_order is None:
        logger.info("decisions for %s rejected: %s", query.query_id or "query",
                    ", ".join(d.code for d in diags))
        return ValidationResult(decisions=None, diagnostics=diags)

    encoding_requests = []
    for i, req in enumerate(decisions.encoding_requests):
        field = f"encoding_requests[{i}]"
        spec = _column_spec(catalog, req.table, req.column)
        if spec is None:
            diag("UNKNOWN_COLUMN", field, f"{req.table}.{req.column} is not in the catalog", "dropped")
        elif not _encoding_applicable(req.encoding, spec.type):
            diag("ENCODING_INAPPLICABLE", field, f"{req.encoding} cannot encode {spec.type_string()}", "dropped")
        else:
            encoding_requests.append(req)

    index_requests = []
    for i, req in enumerate(decisions.index_requests):
        if _column_spec(catalog, req.table, req.column) is None:
            diag("UNKNOWN_COLUMN", f"index_requests[{i}]", f"{req.table}.{req.column} is not in the catalog",
                 "dropped")
        else:
            index_requests.append(req)
    requested = {r.index_id for r in index_requests}

    access = {}
    for name, path in decisions.access_paths.items():
        alias = _resolve_alias(name, query)
        field = f"access_paths.{name}"
        if alias is None:
            diag("UNKNOWN_TABLE", field, f"'{name}' is not a table of this query", "dropped")
            continue
        access[alias] = _check_access(alias, path, query, tables, requested, field, diag)

    aggregation = decisions.aggregation
    if aggregation != "auto":
        if not query.is_aggregate:
            diag("STRATEGY_INAPPLICABLE", "aggregation", "query has no aggregation; using auto")
            aggregation = "auto"
        elif aggregation == "direct_array" and dense_group_domain(query, tables) is None:
            diag("STRATEGY_INAPPLICABLE", "aggregation",
                 "direct_array needs dense dictionary or bounded-integer group keys; using auto")
            aggregation = "auto"

    fusion = {}
    for name, mode in decisions.fusion.items():
        if name != MAIN_PIPELINE:
            diag("UNKNOWN_PIPELINE", f"fusion.{name}", f"only the '{MAIN_PIPELINE}' pipeline exists", "dropped")
        else:
            fusion[name] = mode

    thread_count = decisions.thread_count
    if thread_count is not None and not 1 <= thread_count <= MAX_THREADS:
        diag("BAD_THREAD_COUNT", "thread_count", f"{thread_count} outside [1, {MAX_THREADS}]; using default")
        thread_count = None

    prefetch = decisions.prefetch_batch
    if prefetch < 1:
        diag("BAD_PREFETCH", "prefetch_batch", f"{prefetch} < 1; using 1024")
        prefetch = 1024

    subs: Dict[int, PlanDecisionSet] = {}
    for ordinal, sub_decisions in decisions.subquery_decisions.items():
        field = f"subquery_decisions.{ordinal}"
        if not 0 <= ordinal < len(query.subqueries):
            diag("UNKNOWN_SUBQUERY", field, f"query has {len(query.subqueries)} subquery(ies)", "dropped")
            continue
        sub_result = validate_decisions(sub_decisions, query.subqueries[ordinal], catalog, tables,
                                        prefix=f"{prefix}{field}.")
        diags.extend(sub_result.diagnostics)
        if sub_result.rejected:
            diag("SUBQUERY_DEFAULTED", field, "invalid subquery decisions replaced by defaults")
            continue
        subs[ordinal] = sub_result.decisions

    validated = PlanDecisionSet(
        join_order=join_order,
        access_paths=access,
        aggregation=aggregation,
        encoding_requests=encoding_requests,
        index_requests=index_requests,
        fusion=fusion,
        thread_count=thread_count,
        prefetch_batch=prefetch,
        subquery_decisions=subs,
    )
    for d in diags:
        logger.info("%s: %s %s (%s)", query.query_id or "query", d.code, d.field, d.action)
    return ValidationResult(decisions=validated, diagnostics=diags)


def _resolve_alias(name: str, query: BoundQuery) -> Optional[str]:
    if name in query.tables:
        return name
    hits = [alias for alias, table in query.tables.items() if table == name]
    return hits[0] if len(hits) == 1 else None


def _check_join_order(steps: List[JoinStep], query: BoundQuery, diag) -> Optional[List[JoinStep]]:
    out: List[JoinStep] = []
    seen = set()
    ok = True
    for i, step in enumerate(steps):
        alias = _resolve_alias(step.table, query)
        if alias is None:
            diag("UNKNOWN_TABLE", f"join_order[{i}]", f"'{step.table}' is not a table of this query", "rejected")
            ok = False
            continue
        if alias in seen:
            diag("DUPLICATE_TABLE", f"join_order[{i}]", f"'{alias}' appears twice", "rejected")
            ok = False
            continue
        seen.add(alias)
        role = step.role
        if i == 0 and role != "base":
            diag("BAD_ROLE", f"join_order[{i}].role", "the first table is the base input")
            role = "base"
        elif i > 0 and role == "base":
            diag("BAD_ROLE", f"join_order[{i}].role", "only the first table is the base input; using build")
            role = "build"
        out.append(JoinStep(table=alias, role=role))
    for alias in query.tables:
        if alias not in seen:
            diag("MISSING_TABLE", "join_order", f"'{alias}' is missing from join_order", "rejected")
            ok = False
    if not ok:
        return None

    bound = set()
    for i, step in enumerate(out):
        if i > 0 and not any(step.table in j.aliases and (set(j.aliases) - {step.table}) <= bound
                             for j in query.join_conditions):
            diag("CROSS_PRODUCT", f"join_order[{i}]", f"'{step.table}' joins without an equality condition", "note")
        bound.add(step.table)
    return out


def _check_access(alias: str, path: AccessPath, query: BoundQuery, tables: Mapping[str, ColumnarTable],
                  requested: set, field: str, diag) -> AccessPath:
    table_name = query.base_table(alias)
    if path.kind != AccessKind.INDEX_POSTINGS:
        return AccessPath(kind=path.kind)
    fallback = AccessPath(kind=AccessKind.ZONE_PRUNED_SCAN)
    parsed = parse_index_id(path.index or "")
    if parsed is None:
        diag("UNKNOWN_INDEX", field, f"index id '{path.index}' is not <table>.<column>.<kind>")
        return fallback
    owner, column, kind = parsed
    if owner != table_name:
        diag("INDEX_TABLE_MISMATCH", field, f"{path.index} does not index {table_name}")
        return fallback
    table = tables.get(table_name)
    exists = table is not None and index_id(table_name, column, IndexKind(kind)) in table.indexes
    if not exists and path.index not in requested:
        diag("UNKNOWN_INDEX", field, f"{path.index} neither exists nor is requested")
        return fallback
    if column not in filter_columns(query, alias) and column != ordered_aggregation_column(query, alias):
        diag("INDEX_NOT_APPLICABLE", field,
             f"no equality filter or single-column GROUP BY on {table_name}.{column}")
        return fallback
    return AccessPath(kind=AccessKind.INDEX_POSTINGS, index=path.index)


def _column_spec(catalog: Catalog, table: str, column: str):
    schema = catalog.tables.get(table)
    if schema is None or not schema.has_column(column):
        return None
    return schema.column(column)


def _encoding_applicable(encoding: str, kind: TypeKind) -> bool:
    if kind in (TypeKind.DECIMAL, TypeKind.DATE):
        return False
    if encoding == "dictionary":
        return kind in (TypeKind.VARCHAR, TypeKind.CHAR)
    if encoding == "bit_packed":
        return kind == TypeKind.INT64
    return True
