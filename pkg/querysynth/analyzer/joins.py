from typing import Dict, Iterable, Tuple

from querysynth.models.profile import JoinEdge, JoinGraph
from querysynth.sql.binder import BoundQuery


def extract_join_graph(queries: Iterable[BoundQuery]) -> JoinGraph:
    """One edge per distinct equi-join pair; frequency = number of queries containing it."""
    counts: Dict[Tuple[str, str], int] = {}
    nodes: set = set()
    for query in queries:
        nodes.update(query.tables.values())
        for edge in _query_edges(query):
            counts[edge] = counts.get(edge, 0) + 1
    edges = [JoinEdge(left=a, right=b, frequency=n) for (a, b), n in sorted(counts.items())]
    return JoinGraph(nodes=sorted(nodes), edges=edges)


def _query_edges(query: BoundQuery) -> set:
    edges = set(query.join_edges())
    for sub in query.subqueries:
        edges |= _query_edges(sub)
    return edges
