"""
ResultSet: the common output shape of the reference interpreter and compiled plans.
"""
import math
from dataclasses import dataclass, field
from datetime import date
from decimal import Decimal
from typing import Any, List, Optional, Sequence

from querysynth import jsonio
from querysynth.models.catalog import TypeKind
from querysynth.sql import types as T

NULL_TEXT = "NULL"


@dataclass
class ResultSet:
    columns: List[str]
    types: List[T.SqlType]
    rows: List[tuple]
    ordered: bool = False
    order_columns: Optional[List[int]] = None   # output positions of ORDER BY keys, when all are outputs
    sort_keys: Optional[List[tuple]] = field(default=None, repr=False)  # per-row ORDER BY key values
    cut_in_tie: bool = False  # LIMIT dropped rows whose ORDER BY keys equal the last kept row

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} cells, expected {width}")

    def to_text(self, delimiter: str = "|") -> str:
        """Deterministic delimited form (golden files): header line, then one line per row."""
        lines = [delimiter.join(self.columns)]
        for row in self.rows:
            lines.append(delimiter.join(format_cell(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "columns": [{"name": n, "type": str(t)} for n, t in zip(self.columns, self.types)],
            "ordered": self.ordered,
            "rows": [[json_cell(v) for v in row] for row in self.rows],
        }

    def dumps(self) -> str:
        return jsonio.dumps_str(self.to_json(), pretty=True)


def format_cell(value: Any) -> str:
    if value is None:
        return NULL_TEXT
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Decimal):
        return format(value, "f")
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def json_cell(value: Any) -> Any:
    if isinstance(value, Decimal):
        return format(value, "f")
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def normalize_cell(value: Any, t: T.SqlType) -> Any:
    """Materialize a cell at its output type; decimals are shown at the type's scale."""
    if value is None or t is None or t.is_null:
        return value
    kind = t.kind
    if kind == TypeKind.DECIMAL:
        return Decimal(value).quantize(Decimal(1).scaleb(-t.scale))
    if kind == TypeKind.INT64:
        return int(value)
    if kind == TypeKind.DOUBLE:
        return float(value)
    if kind == TypeKind.BOOL:
        return bool(value)
    return value


def null_last_key(value: Any) -> tuple:
    return (value is None, value if value is not None else 0)


def canonical_row_key(row: Sequence[Any]) -> tuple:
    return tuple(null_last_key(v) for v in row)


def order_rows(rows: List[tuple], keys: List[tuple], desc: Sequence[bool]) -> List[int]:
    """
    Positions of `rows` in ORDER BY order: NULLs last in every direction, a stable
    sort so rows with equal keys keep their input order.
    """
    order = list(range(len(rows)))
    for k in reversed(range(len(desc))):
        present = [i for i in order if keys[i][k] is not None]
        missing = [i for i in order if keys[i][k] is None]
        present.sort(key=lambda i: keys[i][k], reverse=desc[k])
        order = present + missing
    return order
