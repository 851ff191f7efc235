"""
Workload characteristics shared by every agent stage as one JSON document.
"""
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class HardwareProfile(BaseModel):
    core_count: int = 8
    l1_bytes: int = 32 * 1024
    l2_bytes: int = 512 * 1024
    l3_bytes: int = 8 * 1024 * 1024
    cache_line_bytes: int = 64
    simd: Optional[str] = None
    source: str = "defaults"
    warnings: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _positive(self):
        for name in ("core_count", "l1_bytes", "l2_bytes", "l3_bytes", "cache_line_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        line = self.cache_line_bytes
        if line & (line - 1):
            raise ValueError("cache_line_bytes must be a power of two")
        return self


class ColumnStats(BaseModel):
    row_count: int
    ndv: int
    # JSON-native: decimals and dates are carried as strings
    min: Optional[Union[bool, int, float, str]] = None
    max: Optional[Union[bool, int, float, str]] = None
    null_count: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        if self.ndv > self.row_count - self.null_count:
            raise ValueError("ndv exceeds non-null row count")
        return self


class JoinEdge(BaseModel):
    left: str   # "table.column"
    right: str
    frequency: int = 1

    def key(self) -> tuple:
        return tuple(sorted((self.left, self.right)))


class JoinGraph(BaseModel):
    nodes: List[str] = Field(default_factory=list)
    edges: List[JoinEdge] = Field(default_factory=list)


class SelectivityEstimate(BaseModel):
    table: str
    predicate: str
    estimate: float
    sample_size: int
    method: Literal["full_scan", "sample"]

    @field_validator("estimate")
    @classmethod
    def _unit_interval(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("estimate must lie in [0, 1]")
        return v


class TableProfile(BaseModel):
    row_count: int
    columns: Dict[str, ColumnStats]
    encodings: Dict[str, str] = Field(default_factory=dict)
    indexes: List[str] = Field(default_factory=list)


class WorkloadProfile(BaseModel):
    hardware: HardwareProfile
    tables: Dict[str, TableProfile]
    join_graph: JoinGraph
    selectivities: Dict[str, List[SelectivityEstimate]] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    def column_stats(self, table: str, column: str) -> Optional[ColumnStats]:
        tp = self.tables.get(table)
        return tp.columns.get(column) if tp else None
