"""
Zone maps: per-block (min, max, null_count) over encoded values.
"""
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from querysynth.storage.encoding import ColumnVector, EncodingKind

DEFAULT_BLOCK_SIZE = 2048


@dataclass
class ZoneMap:
    block_size: int
    row_count: int
    mins: np.ndarray
    maxs: np.ndarray
    null_counts: np.ndarray

    @property
    def block_count(self) -> int:
        return int(self.null_counts.shape[0])

    def block_rows(self, block: int) -> Tuple[int, int]:
        start = block * self.block_size
        return start, min(start + self.block_size, self.row_count)

    def null_only(self) -> np.ndarray:
        sizes = np.minimum(
            self.block_size,
            self.row_count - np.arange(self.block_count, dtype=np.int64) * self.block_size,
        )
        return self.null_counts >= sizes

    def blocks_overlapping(self, start: int, end: int) -> range:
        if end <= start:
            return range(0)
        return range(start // self.block_size, (end - 1) // self.block_size + 1)

    def entries(self) -> Iterator[Tuple[int, Optional[object], Optional[object], int]]:
        only_null = self.null_only()
        for b in range(self.block_count):
            if only_null[b]:
                yield b, None, None, int(self.null_counts[b])
            else:
                yield b, self.mins[b].item(), self.maxs[b].item(), int(self.null_counts[b])


def zone_map_supported(vector: ColumnVector) -> bool:
    if vector.decision.kind == EncodingKind.RAW:
        return vector.data.dtype.kind in "iuf"
    return True


def build_zone_maps(vector: ColumnVector, block_size: int = DEFAULT_BLOCK_SIZE) -> ZoneMap:
    """One (min, max, null_count) entry per ceil(rows / block_size) blocks."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    n = vector.row_count
    blocks = -(-n // block_size)
    starts = np.arange(blocks, dtype=np.int64) * block_size
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return ZoneMap(block_size, 0, empty, empty.copy(), empty.copy())

    data = vector.data
    if data.dtype.kind == "f":
        lo_fill, hi_fill = np.inf, -np.inf
        values = data.astype(np.float64, copy=False)
    else:
        values = data.astype(np.int64, copy=False)
        info = np.iinfo(np.int64)
        lo_fill, hi_fill = info.max, info.min

    nulls = vector.nulls
    if nulls is not None and nulls.any():
        for_min = np.where(nulls, lo_fill, values)
        for_max = np.where(nulls, hi_fill, values)
        null_counts = np.add.reduceat(nulls.astype(np.int64), starts)
    else:
        for_min = for_max = values
        null_counts = np.zeros(blocks, dtype=np.int64)

    mins = np.minimum.reduceat(for_min, starts)
    maxs = np.maximum.reduceat(for_max, starts)
    return ZoneMap(block_size=block_size, row_count=n, mins=mins, maxs=maxs, null_counts=null_counts)
