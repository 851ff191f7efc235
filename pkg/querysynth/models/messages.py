"""
Agent stage payloads. Each stage answers with one JSON object validated against
the model below; `rationale` is free text and never read by the pipeline.
"""
from enum import Enum
from typing import Dict, List, Literal, Optional, Type

from pydantic import BaseModel, ConfigDict, Field

from querysynth.models.plan import EncodingRequest, IndexRequest, PlanDecisionSet


class Stage(str, Enum):
    WORKLOAD_ANALYSIS = "workload_analysis"
    STORAGE_DESIGN = "storage_design"
    PLAN_DECISION = "plan_decision"
    OPTIMIZER_FEEDBACK = "optimizer_feedback"


class HotColumn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    table: str
    column: str
    usage: Literal["filter", "join", "group", "aggregate", "sort"]


class WorkloadAnalysis(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rationale: str = ""
    bottlenecks: List[str] = Field(default_factory=list)
    hot_columns: List[HotColumn] = Field(default_factory=list)
    recommendations: List[str] = Field(default_factory=list)


class StorageDesign(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rationale: str = ""
    encoding_requests: List[EncodingRequest] = Field(default_factory=list)
    index_requests: List[IndexRequest] = Field(default_factory=list)


class PlanDecision(PlanDecisionSet):
    rationale: str = ""

    def decisions(self) -> PlanDecisionSet:
        return PlanDecisionSet.model_validate(self.model_dump(include=set(PlanDecisionSet.model_fields)))


class OptimizerFeedback(PlanDecision):
    bottleneck: str = ""


STAGE_MODELS: Dict[Stage, Type[BaseModel]] = {
    Stage.WORKLOAD_ANALYSIS: WorkloadAnalysis,
    Stage.STORAGE_DESIGN: StorageDesign,
    Stage.PLAN_DECISION: PlanDecision,
    Stage.OPTIMIZER_FEEDBACK: OptimizerFeedback,
}


class AgentMessage(BaseModel):
    stage: Stage
    payload: BaseModel
    raw_text: str = ""
    repaired: bool = False
    query_id: Optional[str] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def rationale(self) -> str:
        return getattr(self.payload, "rationale", "")

    def decisions(self) -> Optional[PlanDecisionSet]:
        if isinstance(self.payload, PlanDecision):
            return self.payload.decisions()
        return None


class TokenUsage(BaseModel):
    input_tokens: int = Field(default=0, ge=0)
    output_tokens: int = Field(default=0, ge=0)
    estimated: bool = False


class ChatResponse(BaseModel):
    text: str
    usage: TokenUsage = Field(default_factory=TokenUsage)
    model: str = ""
