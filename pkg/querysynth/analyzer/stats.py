"""
Exact column statistics (single pass + exact distinct set; desk-scale data fits memory).
"""
from datetime import date
from decimal import Decimal
from typing import Any, Dict, List

import numpy as np

from querysynth.models.profile import ColumnStats
from querysynth.storage.encoding import ColumnVector, EncodingKind
from querysynth.storage.table import ColumnarTable


def json_scalar(value: Any) -> Any:
    if isinstance(value, Decimal):
        return str(value)
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, np.generic):
        return value.item()
    return value


def stats_from_values(values: List[Any]) -> ColumnStats:
    present = [v for v in values if v is not None]
    distinct = set(present)
    return ColumnStats(
        row_count=len(values),
        ndv=len(distinct),
        min=json_scalar(min(distinct)) if distinct else None,
        max=json_scalar(max(distinct)) if distinct else None,
        null_count=len(values) - len(present),
    )


def vector_stats(vec: ColumnVector) -> ColumnStats:
    n = vec.row_count
    data = vec.data
    nulls = vec.nulls
    if nulls is not None and nulls.any():
        data = data[~nulls]
    null_count = n - int(data.shape[0])
    if data.shape[0] == 0:
        return ColumnStats(row_count=n, ndv=0, null_count=null_count)

    distinct = np.unique(data)
    if vec.decision.kind == EncodingKind.DICTIONARY:
        used = vec.dictionary[distinct.astype(np.int64)].tolist()
        lo, hi = min(used), max(used)
    else:
        lo, hi = vec.to_logical(distinct[0]), vec.to_logical(distinct[-1])
    return ColumnStats(
        row_count=n,
        ndv=int(distinct.shape[0]),
        min=json_scalar(lo),
        max=json_scalar(hi),
        null_count=null_count,
    )


def compute_column_stats(table: ColumnarTable) -> Dict[str, ColumnStats]:
    return {name: vector_stats(vec) for name, vec in table.columns.items()}
