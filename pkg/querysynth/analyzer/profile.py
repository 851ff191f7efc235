"""
Workload profile assembly: hardware + per-table stats + join graph + selectivities.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

from querysynth import jsonio
from querysynth.analyzer.joins import extract_join_graph
from querysynth.analyzer.selectivity import SamplePolicy, query_selectivities
from querysynth.analyzer.stats import compute_column_stats
from querysynth.models.profile import HardwareProfile, TableProfile, WorkloadProfile
from querysynth.sql.binder import BoundQuery
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE = SamplePolicy(n=10_000, seed=0)


def table_profile(table: ColumnarTable) -> TableProfile:
    return TableProfile(
        row_count=table.row_count,
        columns=compute_column_stats(table),
        encodings={name: d.describe() for name, d in table.encodings().items()},
        indexes=sorted(table.indexes),
    )


def build_workload_profile(tables: Mapping[str, ColumnarTable], queries: Sequence[BoundQuery],
                           hardware: HardwareProfile,
                           policy: Optional[SamplePolicy] = None) -> WorkloadProfile:
    policy = policy or DEFAULT_SAMPLE
    names = sorted(tables)
    # per-table analyses are independent
    with ThreadPoolExecutor(max_workers=max(1, min(len(names), hardware.core_count))) as pool:
        profiles = dict(zip(names, pool.map(lambda n: table_profile(tables[n]), names)))

    warnings = list(hardware.warnings)
    selectivities: Dict[str, list] = {}
    for i, query in enumerate(queries):
        key = query.query_id or f"q{i}"
        selectivities[key] = query_selectivities(query, tables, policy, warnings)

    graph = extract_join_graph(queries)
    for edge in graph.edges:
        for end in (edge.left, edge.right):
            table, column = end.split(".", 1)
            if table not in tables or not tables[table].schema.has_column(column):
                warnings.append(f"join edge endpoint {end} not in the catalog")
    logger.info("profiled %d tables, %d queries, %d join edges", len(names), len(queries), len(graph.edges))
    return WorkloadProfile(hardware=hardware, tables=profiles, join_graph=graph,
                           selectivities=selectivities, warnings=warnings)


def save_profile(profile: WorkloadProfile, path: Path) -> None:
    jsonio.write_json(Path(path), profile.model_dump(mode="json"))


def load_profile(path: Path) -> WorkloadProfile:
    return WorkloadProfile.model_validate(jsonio.read_json(Path(path)))


def profile_json(profile: WorkloadProfile) -> str:
    """The exact payload embedded in agent prompts."""
    return jsonio.dumps_str(profile.model_dump(mode="json"), pretty=True)
