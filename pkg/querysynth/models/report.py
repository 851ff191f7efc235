"""
BenchReport: what a run leaves behind in report.json / report.md.
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from querysynth.models.state import IterationRecord, OptimizationOutcome, OptimizationState


class IterationRow(BaseModel):
    iteration: int
    source: str
    verdict: str
    median_ms: Optional[float] = None
    min_ms: Optional[float] = None
    samples_ms: List[float] = Field(default_factory=list)
    decisions: Optional[Dict[str, Any]] = None
    storage_changes: List[str] = Field(default_factory=list)
    diagnostics: List[str] = Field(default_factory=list)
    error: Optional[str] = None

    @classmethod
    def from_record(cls, record: IterationRecord) -> "IterationRow":
        timing = record.feedback.timing
        return cls(
            iteration=record.iteration,
            source=record.source,
            verdict=record.verdict.value,
            median_ms=timing.median_ms if timing else None,
            min_ms=timing.min_ms if timing else None,
            samples_ms=list(timing.samples_ms) if timing else [],
            decisions=record.decisions.model_dump(mode="json") if record.decisions else None,
            storage_changes=list(record.storage_changes),
            diagnostics=[f"{d.code} {d.field} ({d.action})" for d in record.feedback.diagnostics],
            error=record.error or record.feedback.mismatch,
        )


class QueryReport(BaseModel):
    query_id: str
    status: Literal["ok", "failed", "budget_stopped"]
    stop_reason: Optional[str] = None
    stop_detail: Optional[str] = None
    best_iteration: Optional[int] = None
    baseline_ms: Optional[float] = None
    best_ms: Optional[float] = None
    strategies: List[str] = Field(default_factory=list)
    indexes_used: List[str] = Field(default_factory=list)
    iterations: List[IterationRow] = Field(default_factory=list)
    plan: str = ""
    error: Optional[str] = None

    @property
    def speedup(self) -> Optional[float]:
        if self.baseline_ms and self.best_ms:
            return self.baseline_ms / self.best_ms
        return None

    @classmethod
    def from_outcome(cls, outcome: OptimizationOutcome) -> "QueryReport":
        state = outcome.state
        rows = [IterationRow.from_record(r) for r in state.records]
        return cls(
            query_id=outcome.query_id,
            status="ok" if outcome.verified else "failed",
            stop_reason=state.stop_reason.value if state.stop_reason else None,
            stop_detail=state.stop_detail,
            best_iteration=state.best_iteration,
            baseline_ms=rows[0].median_ms if rows else None,
            best_ms=state.best_ms,
            strategies=outcome.strategies,
            indexes_used=outcome.indexes_used,
            iterations=rows,
            plan=outcome.plan_rendering,
            error=None if outcome.verified else "no iteration produced a correct, measured plan",
        )

    @classmethod
    def budget_stopped(cls, state: OptimizationState) -> "QueryReport":
        return cls(query_id=state.query_id, status="budget_stopped",
                   stop_reason=state.stop_reason.value if state.stop_reason else None,
                   stop_detail=state.stop_detail)

    @classmethod
    def failed(cls, query_id: str, error: str) -> "QueryReport":
        return cls(query_id=query_id, status="failed", stop_reason="failed", error=error)


# measured numbers and messages that quote them
_VOLATILE_KEYS = {"median_ms", "min_ms", "samples_ms", "error"}


class BenchReport(BaseModel):
    run_id: str
    backend: str
    model: str
    queries: List[QueryReport] = Field(default_factory=list)
    cost: Dict[str, Any] = Field(default_factory=dict)
    replay_of: Optional[str] = None

    @property
    def failed(self) -> List[QueryReport]:
        return [q for q in self.queries if q.status == "failed"]

    def totals(self) -> Dict[str, Any]:
        done = [q for q in self.queries if q.status == "ok"]
        baseline = sum(q.baseline_ms for q in done if q.baseline_ms is not None)
        best = sum(q.best_ms for q in done if q.best_ms is not None)
        return {
            "queries": len(self.queries),
            "ok": len(done),
            "failed": len(self.failed),
            "budget_stopped": sum(1 for q in self.queries if q.status == "budget_stopped"),
            "iterations": sum(len(q.iterations) for q in self.queries),
            "baseline_ms": round(baseline, 3),
            "best_ms": round(best, 3),
        }

    def to_json(self) -> dict:
        data = self.model_dump(mode="json")
        data["totals"] = self.totals()
        return data

    def replay_view(self) -> dict:
        """Report content that must survive a replay: no timings, costs or run identity."""
        queries = []
        for q in self.queries:
            data = q.model_dump(mode="json", exclude={"baseline_ms", "best_ms", "stop_detail", "error"})
            data["iterations"] = [{k: v for k, v in row.items() if k not in _VOLATILE_KEYS}
                                  for row in data["iterations"]]
            queries.append(data)
        return {"queries": queries}
