"""
Execution statistics and timing summaries.
"""
import statistics
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


class OperatorStats(BaseModel):
    node: int
    op: str
    wall_ms: float = 0.0
    rows_in: int = 0
    rows_out: int = 0
    detail: Dict[str, Any] = Field(default_factory=dict)


class ExecutionStats(BaseModel):
    operators: List[OperatorStats] = Field(default_factory=list)
    total_ms: float = 0.0
    peak_memory_bytes: int = 0
    output_rows: int = 0

    def top_operators(self, n: int = 3) -> List[OperatorStats]:
        return sorted(self.operators, key=lambda o: (-o.wall_ms, o.node))[:n]

    def digest(self) -> dict:
        """Feedback digest: the slowest operators with their row counts."""
        return {
            "total_ms": round(self.total_ms, 3),
            "output_rows": self.output_rows,
            "peak_memory_bytes": self.peak_memory_bytes,
            "top_operators": [
                {"node": o.node, "op": o.op, "wall_ms": round(o.wall_ms, 3),
                 "rows_in": o.rows_in, "rows_out": o.rows_out, **o.detail}
                for o in self.top_operators()
            ],
        }


class TimingSummary(BaseModel):
    status: Literal["ok", "timeout"] = "ok"
    samples_ms: List[float] = Field(default_factory=list)
    median_ms: Optional[float] = None
    min_ms: Optional[float] = None
    warmups: int = 0

    @classmethod
    def from_samples(cls, samples_ms: List[float], warmups: int = 0) -> "TimingSummary":
        return cls(samples_ms=list(samples_ms), median_ms=statistics.median(samples_ms),
                   min_ms=min(samples_ms), warmups=warmups)

    @classmethod
    def timed_out(cls, samples_ms: Optional[List[float]] = None, warmups: int = 0) -> "TimingSummary":
        return cls(status="timeout", samples_ms=list(samples_ms or []), warmups=warmups)
