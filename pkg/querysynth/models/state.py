"""
Optimization loop state: one record per iteration, the best correct iteration so
far, and why the loop stopped.
"""
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from querysynth.models.plan import Diagnostic, PlanDecisionSet
from querysynth.models.results import TimingSummary


class Verdict(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    TIMEOUT = "timeout"
    ERROR = "error"              # kernel contract violation or overflow
    REJECTED = "rejected"        # validator refused the decisions
    STAGE_FAILED = "stage_failed"  # schema violation after repair, agent timeout, transport error


class StopReason(str, Enum):
    MAX_ITERATIONS = "max_iterations"
    EARLY_STOP = "early_stop"
    TARGET_REACHED = "target_reached"
    BUDGET_STOPPED = "budget_stopped"
    FAILED = "failed"


class FeedbackRecord(BaseModel):
    verdict: Verdict
    timing: Optional[TimingSummary] = None
    operator_stats: Dict[str, Any] = Field(default_factory=dict)
    diagnostics: List[Diagnostic] = Field(default_factory=list)
    mismatch: Optional[str] = None

    def digest(self) -> dict:
        out: Dict[str, Any] = {"verdict": self.verdict.value}
        if self.timing is not None and self.timing.median_ms is not None:
            out["median_ms"] = round(self.timing.median_ms, 3)
        if self.operator_stats:
            out["operators"] = self.operator_stats.get("top_operators", [])
        if self.diagnostics:
            out["diagnostics"] = [f"{d.code} {d.field}: {d.message} ({d.action})" for d in self.diagnostics]
        if self.mismatch:
            out["mismatch"] = self.mismatch
        return out


class IterationRecord(BaseModel):
    iteration: int
    source: str                               # defaults | plan_decision | optimizer_feedback
    decisions: Optional[PlanDecisionSet] = None
    feedback: FeedbackRecord
    storage_changes: List[str] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def verdict(self) -> Verdict:
        return self.feedback.verdict

    @property
    def median_ms(self) -> Optional[float]:
        t = self.feedback.timing
        return t.median_ms if t is not None and t.status == "ok" else None

    @property
    def selectable(self) -> bool:
        return self.verdict == Verdict.CORRECT and self.median_ms is not None

    def replay_view(self) -> dict:
        """Everything except measured numbers."""
        return {
            "iteration": self.iteration,
            "source": self.source,
            "decisions": self.decisions.model_dump(mode="json") if self.decisions else None,
            "verdict": self.verdict.value,
            "diagnostics": [d.model_dump(mode="json") for d in self.feedback.diagnostics],
            "storage_changes": list(self.storage_changes),
        }


class OptimizationState(BaseModel):
    query_id: str
    max_iterations: int
    epsilon: float = 0.05
    patience: int = 2
    target_ms: Optional[float] = None
    records: List[IterationRecord] = Field(default_factory=list)
    best_iteration: Optional[int] = None
    stale_rounds: int = 0
    stop_reason: Optional[StopReason] = None
    stop_detail: Optional[str] = None

    @property
    def best(self) -> Optional[IterationRecord]:
        if self.best_iteration is None:
            return None
        return next(r for r in self.records if r.iteration == self.best_iteration)

    @property
    def best_ms(self) -> Optional[float]:
        best = self.best
        return best.median_ms if best is not None else None

    @property
    def next_iteration(self) -> int:
        return len(self.records)

    def add(self, record: IterationRecord) -> bool:
        """Append a record and update the best; True when it became the new best."""
        self.records.append(record)
        previous = self.best_ms
        if not record.selectable:
            self.stale_rounds += 1
            return False
        if previous is None or record.median_ms < previous:
            improved = previous is None or (previous - record.median_ms) / previous >= self.epsilon
            self.best_iteration = record.iteration
            self.stale_rounds = 0 if improved else self.stale_rounds + 1
            return True
        self.stale_rounds += 1
        return False

    def should_stop(self) -> Optional[StopReason]:
        if self.target_ms is not None and self.best_ms is not None and self.best_ms <= self.target_ms:
            return StopReason.TARGET_REACHED
        if len(self.records) >= self.max_iterations:
            return StopReason.MAX_ITERATIONS
        if self.stale_rounds >= self.patience:
            return StopReason.EARLY_STOP
        return None

    def stop(self, reason: StopReason, detail: Optional[str] = None) -> None:
        if self.stop_reason is None:
            self.stop_reason = reason
            self.stop_detail = detail

    def digest(self, last: int = 3) -> dict:
        """What the optimizer agent sees: the best plan and the most recent feedback."""
        best = self.best
        return {
            "query_id": self.query_id,
            "iterations_done": len(self.records),
            "iterations_left": max(0, self.max_iterations - len(self.records)),
            "best_iteration": self.best_iteration,
            "best_median_ms": round(best.median_ms, 3) if best is not None else None,
            "best_decisions": best.decisions.model_dump(mode="json") if best and best.decisions else None,
            "recent": [
                {"iteration": r.iteration, "source": r.source, **r.feedback.digest()}
                for r in self.records[-last:]
            ],
        }

    def replay_view(self) -> dict:
        return {
            "query_id": self.query_id,
            "best_iteration": self.best_iteration,
            "stop_reason": self.stop_reason.value if self.stop_reason else None,
            "records": [r.replay_view() for r in self.records],
        }


class OptimizationOutcome(BaseModel):
    """best_decisions is None when no iteration was both correct and measured."""
    query_id: str
    best_decisions: Optional[PlanDecisionSet] = None
    plan_rendering: str
    state: OptimizationState
    strategies: List[str] = Field(default_factory=list)
    indexes_used: List[str] = Field(default_factory=list)

    @property
    def verified(self) -> bool:
        return self.state.best is not None

    @property
    def best_ms(self) -> Optional[float]:
        return self.state.best_ms
