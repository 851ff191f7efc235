"""
Prompt templates for the four agent stages.

A prompt is a fixed system message (role, rules, the stage's JSON schema) plus a
user message built from context sections. Sections are JSON dumped with sorted
keys, so the same context always renders to the same bytes. When the sections
exceed the size limit, the least important ones are cut first.
"""
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from querysynth import jsonio
from querysynth.models.messages import STAGE_MODELS, Stage
from querysynth.models.profile import WorkloadProfile
from querysynth.planner.executor import tables_read
from querysynth.storage.encoding import decode_value
from querysynth.storage.table import ColumnarTable

MAX_CONTEXT_CHARS = 24_000
TRUNCATION_MARKER = "…[truncated]"

# lower is kept first
PRIORITY_QUERY = 0
PRIORITY_STATE = 1
PRIORITY_STORAGE = 2
PRIORITY_STATS = 3
PRIORITY_ANALYSIS = 4
PRIORITY_SELECTIVITY = 5
PRIORITY_SAMPLES = 9


@dataclass(frozen=True)
class Section:
    title: str
    body: Any
    priority: int

    def render(self) -> str:
        body = self.body if isinstance(self.body, str) else jsonio.dumps_str(self.body, pretty=True)
        return f"{self.title}\n{body}"


@dataclass(frozen=True)
class Prompt:
    stage: Stage
    system: str
    user: str
    truncated: bool = False

    @property
    def text(self) -> str:
        return f"{self.system}\n\n{self.user}"


def stage_schema(stage: Stage) -> str:
    return jsonio.dumps_str(STAGE_MODELS[stage].model_json_schema(), pretty=True)


# ===================================================================
# SYSTEM MESSAGES
# ===================================================================

_ROLES = {
    Stage.WORKLOAD_ANALYSIS: (
        "You are the Workload Analyzer of an analytical query engine.\n"
        "Study the hardware, table statistics, join graph and queries, and name the\n"
        "bottlenecks and the columns that matter most for filtering, joining and grouping."
    ),
    Stage.STORAGE_DESIGN: (
        "You are the Storage/Index Designer of an analytical query engine.\n"
        "Request column encodings and secondary indexes that make this query cheaper.\n"
        "Requests are applied before the next execution; ask only for what pays off."
    ),
    Stage.PLAN_DECISION: (
        "You are the Query Planner of an analytical query engine.\n"
        "Choose the join order, access paths, aggregation strategy, pipeline fusion,\n"
        "thread count and prefetch batch for this query."
    ),
    Stage.OPTIMIZER_FEEDBACK: (
        "You are the Query Optimizer of an analytical query engine.\n"
        "Read the runtime feedback of previous iterations and propose a revised plan\n"
        "that is faster than the best correct plan so far."
    ),
}

_RULES = """\
📋 RULES:
- Answer with ONE JSON object that validates against the schema below
- Put any explanation in the "rationale" field; nothing else is read by humans
- Table names in join_order and access_paths are the FROM aliases of the query
- The first join_order entry has role "base"; later entries are "build" (the new table is hashed) or "probe" (the joined rows so far are hashed)
- Index access paths name an existing or requested index as "<table>.<column>.<kind>"
- Decisions never change results, only speed; invalid choices are replaced by safe defaults"""


def system_message(stage: Stage) -> str:
    return (
        f"🎯 ROLE:\n{_ROLES[stage]}\n\n"
        f"{_RULES}\n\n"
        f"🧾 RESPONSE SCHEMA ({stage.value}):\n{stage_schema(stage)}"
    )


# ===================================================================
# RENDERING
# ===================================================================

def _fit(sections: Sequence[Section], max_chars: int) -> tuple[List[str], bool]:
    rendered = [s.render() for s in sections]
    budget = max_chars
    keep: Dict[int, str] = {}
    truncated = False
    for i in sorted(range(len(sections)), key=lambda i: (sections[i].priority, i)):
        text = rendered[i]
        if len(text) <= budget:
            keep[i] = text
            budget -= len(text)
        elif budget > len(sections[i].title) + len(TRUNCATION_MARKER) + 1:
            keep[i] = text[: budget - len(TRUNCATION_MARKER)] + TRUNCATION_MARKER
            budget = 0
            truncated = True
        else:
            keep[i] = f"{sections[i].title}\n{TRUNCATION_MARKER}"
            truncated = True
    return [keep[i] for i in range(len(sections))], truncated


def render_prompt(stage: Stage, sections: Iterable[Section], max_chars: int = MAX_CONTEXT_CHARS,
                  repair: Optional[str] = None) -> Prompt:
    """Deterministic; the schema lives in the system message and is never cut."""
    sections = list(sections)
    parts, truncated = _fit(sections, max_chars)
    user = "📚 CONTEXT:\n\n" + "\n\n".join(parts)
    if repair:
        user += f"\n\n❌ YOUR PREVIOUS ANSWER WAS REJECTED:\n{repair}\nReply with the corrected JSON object only."
    else:
        user += f"\n\n✍️ Reply with the {stage.value} JSON object."
    return Prompt(stage=stage, system=system_message(stage), user=user, truncated=truncated)


# ===================================================================
# CONTEXT BUILDERS
# ===================================================================

def profile_for(profile: WorkloadProfile, tables: Iterable[str]) -> dict:
    names = set(tables)
    return {
        "hardware": profile.hardware.model_dump(mode="json", exclude={"warnings"}),
        "tables": {n: t.model_dump(mode="json") for n, t in profile.tables.items() if n in names},
        "join_graph": [e.model_dump(mode="json") for e in profile.join_graph.edges
                       if e.left.split(".")[0] in names or e.right.split(".")[0] in names],
    }


def storage_state(tables: Mapping[str, ColumnarTable], names: Iterable[str]) -> dict:
    out = {}
    for name in sorted(set(names)):
        t = tables.get(name)
        if t is None:
            continue
        out[name] = {
            "rows": t.row_count,
            "encodings": {c: d.describe() for c, d in t.encodings().items()},
            "indexes": sorted(t.indexes),
        }
    return out


def sample_rows(tables: Mapping[str, ColumnarTable], names: Iterable[str], limit: int = 5) -> dict:
    out = {}
    for name in sorted(set(names)):
        t = tables.get(name)
        if t is None:
            continue
        rows = []
        for r in range(min(limit, t.row_count)):
            rows.append({c: decode_value(t.column(c), r) for c in t.schema.column_names})
        out[name] = rows
    return out


def _query_sections(queries: Mapping[str, Any]) -> List[Section]:
    return [Section(f"🔎 QUERY {qid}:", q.digest(), PRIORITY_QUERY) for qid, q in sorted(queries.items())]


def workload_sections(profile: WorkloadProfile, queries: Mapping[str, Any],
                      tables: Optional[Mapping[str, ColumnarTable]] = None) -> List[Section]:
    sections = _query_sections(queries)
    sections.append(Section("📊 WORKLOAD PROFILE:", profile_for(profile, profile.tables), PRIORITY_STATS))
    sections.append(Section("📈 SELECTIVITY ESTIMATES:",
                            {k: [s.model_dump(mode="json") for s in v] for k, v in profile.selectivities.items()},
                            PRIORITY_SELECTIVITY))
    if tables:
        sections.append(Section("🧪 SAMPLE ROWS:", sample_rows(tables, profile.tables), PRIORITY_SAMPLES))
    return sections


def query_sections(query, profile: WorkloadProfile, tables: Mapping[str, ColumnarTable],
                   analysis: Optional[dict] = None, state_digest: Optional[dict] = None,
                   defaults: Optional[dict] = None, samples: bool = True) -> List[Section]:
    """Context for the per-query stages."""
    names = tables_read(query)
    sections = [Section(f"🔎 QUERY {query.query_id}:", query.digest(), PRIORITY_QUERY)]
    if state_digest is not None:
        sections.append(Section("🔁 OPTIMIZATION STATE:", state_digest, PRIORITY_STATE))
    if defaults is not None:
        sections.append(Section("🧭 DEFAULT DECISIONS:", defaults, PRIORITY_STATE))
    sections.append(Section("🗄️ STORAGE:", storage_state(tables, names), PRIORITY_STORAGE))
    sections.append(Section("📊 WORKLOAD PROFILE:", profile_for(profile, names), PRIORITY_STATS))
    if analysis is not None:
        sections.append(Section("🧠 WORKLOAD ANALYSIS:", analysis, PRIORITY_ANALYSIS))
    if samples:
        sections.append(Section("🧪 SAMPLE ROWS:", sample_rows(tables, names), PRIORITY_SAMPLES))
    return sections
