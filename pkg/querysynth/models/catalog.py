"""
Schema models: logical column types, table schemas and the catalog.
"""
import re
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, model_validator

from querysynth import jsonio


class TypeKind(str, Enum):
    INT64 = "int64"
    DOUBLE = "double"
    DECIMAL = "decimal"
    DATE = "date"
    VARCHAR = "varchar"
    CHAR = "char"
    BOOL = "bool"


_TYPE_RE = re.compile(r"^\s*([a-z0-9_]+)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*$", re.I)

_ALIASES = {
    "int": TypeKind.INT64, "integer": TypeKind.INT64, "bigint": TypeKind.INT64,
    "int64": TypeKind.INT64, "double": TypeKind.DOUBLE, "float": TypeKind.DOUBLE,
    "float64": TypeKind.DOUBLE, "decimal": TypeKind.DECIMAL, "numeric": TypeKind.DECIMAL,
    "date": TypeKind.DATE, "varchar": TypeKind.VARCHAR, "text": TypeKind.VARCHAR,
    "string": TypeKind.VARCHAR, "char": TypeKind.CHAR, "bool": TypeKind.BOOL,
    "boolean": TypeKind.BOOL,
}


def parse_type_string(text: str) -> dict:
    """'decimal(12,2)' → {'type': DECIMAL, 'precision': 12, 'scale': 2}"""
    m = _TYPE_RE.match(text)
    if not m or m.group(1).lower() not in _ALIASES:
        raise ValueError(f"unknown column type '{text}'")
    kind = _ALIASES[m.group(1).lower()]
    out: dict = {"type": kind}
    if kind == TypeKind.DECIMAL:
        out["precision"] = int(m.group(2)) if m.group(2) else 18
        out["scale"] = int(m.group(3)) if m.group(3) else 0
    elif kind in (TypeKind.CHAR, TypeKind.VARCHAR) and m.group(2):
        out["length"] = int(m.group(2))
    return out


class ColumnSpec(BaseModel):
    name: str
    type: TypeKind
    precision: Optional[int] = None
    scale: Optional[int] = None
    length: Optional[int] = None
    nullable: bool = False

    @model_validator(mode="before")
    @classmethod
    def _expand_type_string(cls, data):
        if isinstance(data, dict) and isinstance(data.get("type"), str):
            explicit = {k: v for k, v in data.items() if k != "type" and v is not None}
            data = {**parse_type_string(data["type"]), **explicit}
        return data

    @model_validator(mode="after")
    def _check_decimal(self):
        if self.type == TypeKind.DECIMAL:
            if self.precision is None:
                self.precision = 18
            if self.scale is None:
                self.scale = 0
            if not (0 <= self.scale <= self.precision):
                raise ValueError(
                    f"column {self.name}: decimal scale {self.scale} outside [0, {self.precision}]"
                )
        return self

    @property
    def scale_factor(self) -> int:
        return 10 ** (self.scale or 0)

    def type_string(self) -> str:
        if self.type == TypeKind.DECIMAL:
            return f"decimal({self.precision},{self.scale})"
        if self.type in (TypeKind.CHAR, TypeKind.VARCHAR) and self.length:
            return f"{self.type.value}({self.length})"
        return self.type.value


class TableSchema(BaseModel):
    name: str
    columns: List[ColumnSpec]

    @model_validator(mode="after")
    def _unique_names(self):
        seen = set()
        for col in self.columns:
            if col.name in seen:
                raise ValueError(f"table {self.name}: duplicate column '{col.name}'")
            seen.add(col.name)
        return self

    def column(self, name: str) -> ColumnSpec:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def column_names(self) -> List[str]:
        return [c.name for c in self.columns]


class Catalog(BaseModel):
    tables: Dict[str, TableSchema]

    def table(self, name: str) -> TableSchema:
        return self.tables[name]


def load_catalog(path: Path) -> Catalog:
    """
    Schema file: {"tables": [{"name": "...", "columns": [{"name": "...", "type": "decimal(12,2)"}]}]}
    """
    raw = jsonio.read_json(Path(path))
    tables = [TableSchema.model_validate(t) for t in raw["tables"]]
    return Catalog(tables={t.name: t for t in tables})


def dump_catalog(catalog: Catalog) -> dict:
    return {
        "tables": [
            {
                "name": t.name,
                "columns": [
                    {"name": c.name, "type": c.type_string(), "nullable": c.nullable}
                    for c in t.columns
                ],
            }
            for t in catalog.tables.values()
        ]
    }
