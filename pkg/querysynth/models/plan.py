"""
PlanDecisionSet: the structured choices an agent may make for one query, plus the
diagnostics the validator attaches when it repairs or rejects them.
"""
from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

AGGREGATION_CHOICES = ("auto", "direct_array", "partitioned_hash", "shared_cas")
MAIN_PIPELINE = "main"


class AccessKind(str, Enum):
    FULL_SCAN = "full_scan"
    ZONE_PRUNED_SCAN = "zone_pruned_scan"
    INDEX_POSTINGS = "index_postings"


class JoinStep(BaseModel):
    model_config = ConfigDict(extra="forbid")

    table: str   # FROM alias
    role: Literal["base", "build", "probe"]


class AccessPath(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: AccessKind = AccessKind.ZONE_PRUNED_SCAN
    index: Optional[str] = None   # "<table>.<column>.<kind>" for index_postings


class EncodingRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    table: str
    column: str
    encoding: Literal["raw", "dictionary", "bit_packed"]


class IndexRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    table: str
    column: str
    kind: Literal["hash_multimap", "sorted_positions"] = "sorted_positions"

    @property
    def index_id(self) -> str:
        return f"{self.table}.{self.column}.{self.kind}"


class PlanDecisionSet(BaseModel):
    model_config = ConfigDict(extra="forbid")

    join_order: List[JoinStep]
    access_paths: Dict[str, AccessPath] = Field(default_factory=dict)
    aggregation: Literal["auto", "direct_array", "partitioned_hash", "shared_cas"] = "auto"
    encoding_requests: List[EncodingRequest] = Field(default_factory=list)
    index_requests: List[IndexRequest] = Field(default_factory=list)
    fusion: Dict[str, Literal["fused", "staged"]] = Field(default_factory=dict)
    thread_count: Optional[int] = None
    prefetch_batch: int = 1024
    subquery_decisions: Dict[int, "PlanDecisionSet"] = Field(default_factory=dict)

    def access_for(self, alias: str) -> AccessPath:
        return self.access_paths.get(alias) or AccessPath()

    def fused(self, pipeline: str = MAIN_PIPELINE) -> bool:
        return self.fusion.get(pipeline, "staged") == "fused"

    def fingerprint(self) -> str:
        """Stable text form; two decision sets are the same plan iff fingerprints match."""
        from querysynth import jsonio

        return jsonio.dumps_str(self.model_dump(mode="json"))


class Diagnostic(BaseModel):
    code: str
    field: str
    message: str
    action: Literal["replaced", "dropped", "rejected", "note"] = "replaced"


class ValidationResult(BaseModel):
    decisions: Optional[PlanDecisionSet] = None
    diagnostics: List[Diagnostic] = Field(default_factory=list)

    @property
    def rejected(self) -> bool:
        return self.decisions is None


PlanDecisionSet.model_rebuild()
