"""
Cache-adaptive choice of the aggregation strategy.

    direct_array      dense key domain; per-thread accumulator arrays, each group
                      padded to whole cache lines, must fit L1
    partitioned_hash  per-thread hash tables that fit L2 (or L3 across all threads),
                      merged after the scan
    shared_cas        one shared table with keys and values in separate arrays,
                      updated in place; the fallback for huge group counts
"""
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

from querysynth.errors import KernelContractError
from querysynth.kernels.hashing import capacity_for
from querysynth.kernels.hashtable import DEFAULT_LOAD_FACTOR_CAP
from querysynth.models.profile import HardwareProfile

DENSE_DOMAIN_LIMIT = 1 << 16
KEY_BYTES = 8


class StrategyKind(str, Enum):
    DIRECT_ARRAY = "direct_array"
    PARTITIONED_HASH = "partitioned_hash"
    SHARED_CAS = "shared_cas"


@dataclass(frozen=True)
class AggregationStrategy:
    kind: StrategyKind
    # direct_array: per-key domain sizes; group index = mixed radix over them
    domain: Optional[List[int]] = None
    stride_bytes: int = 0
    # hash variants
    capacity: int = 0
    cache_level: Optional[str] = None
    estimated_groups: int = 0
    state_bytes: int = 0
    notes: List[str] = field(default_factory=list)

    @property
    def group_domain_size(self) -> int:
        return math.prod(self.domain) if self.domain else 0

    def describe(self) -> str:
        if self.kind == StrategyKind.DIRECT_ARRAY:
            radix = " x ".join(str(d) for d in self.domain or [])
            return f"direct_array(groups={self.group_domain_size} [{radix}], stride={self.stride_bytes}B)"
        if self.kind == StrategyKind.PARTITIONED_HASH:
            return f"partitioned_hash(per-thread capacity={self.capacity}, target={self.cache_level})"
        return f"shared_cas(capacity={self.capacity}, column-separated keys/values)"

    def to_json(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return out


def round_up(n: int, unit: int) -> int:
    return -(-n // unit) * unit


def dense_domain_ok(domain: Optional[Sequence[int]]) -> bool:
    return bool(domain) and all(d >= 1 for d in domain) and math.prod(domain) <= DENSE_DOMAIN_LIMIT


def select_aggregation_strategy(group_cardinality_estimate: int, state_bytes_per_group: int,
                                hardware: HardwareProfile, thread_count: int,
                                dense_domain: Optional[Sequence[int]] = None,
                                load_factor_cap: float = DEFAULT_LOAD_FACTOR_CAP) -> AggregationStrategy:
    """
    direct_array when a dense key map exists and groups x padded state fits L1;
    otherwise per-thread hash tables sized to L2, or to L3 summed over threads;
    otherwise the shared table.

    Hash tables store state unpadded, so their footprint is groups x state bytes.
    """
    if group_cardinality_estimate < 0:
        raise KernelContractError("group cardinality estimate must be >= 0")
    if state_bytes_per_group <= 0:
        raise KernelContractError("state_bytes_per_group must be > 0")
    threads = max(1, thread_count)
    line = hardware.cache_line_bytes
    stride = round_up(state_bytes_per_group, line)

    if dense_domain_ok(dense_domain):
        groups = max(group_cardinality_estimate, math.prod(dense_domain))
        if groups * stride <= hardware.l1_bytes:
            return AggregationStrategy(
                kind=StrategyKind.DIRECT_ARRAY, domain=list(dense_domain), stride_bytes=stride,
                estimated_groups=group_cardinality_estimate, state_bytes=state_bytes_per_group,
            )

    groups = max(group_cardinality_estimate, 1)
    per_thread = groups * state_bytes_per_group
    capacity = capacity_for(groups, load_factor_cap)
    if per_thread <= hardware.l2_bytes:
        return AggregationStrategy(
            kind=StrategyKind.PARTITIONED_HASH, capacity=capacity, cache_level="l2",
            estimated_groups=group_cardinality_estimate, state_bytes=state_bytes_per_group,
        )
    if per_thread * threads <= hardware.l3_bytes:
        return AggregationStrategy(
            kind=StrategyKind.PARTITIONED_HASH, capacity=capacity, cache_level="l3",
            estimated_groups=group_cardinality_estimate, state_bytes=state_bytes_per_group,
        )
    notes = []
    if capacity * KEY_BYTES > hardware.l3_bytes:
        notes.append(f"key array {capacity * KEY_BYTES} B exceeds l3 {hardware.l3_bytes} B")
    return AggregationStrategy(
        kind=StrategyKind.SHARED_CAS, capacity=capacity, cache_level="l3",
        estimated_groups=group_cardinality_estimate, state_bytes=state_bytes_per_group, notes=notes,
    )


def forced_strategy(kind: StrategyKind, group_cardinality_estimate: int, state_bytes_per_group: int,
                    hardware: HardwareProfile, dense_domain: Optional[Sequence[int]] = None,
                    load_factor_cap: float = DEFAULT_LOAD_FACTOR_CAP) -> AggregationStrategy:
    """A strategy named by the planner instead of chosen by the cache rule."""
    groups = max(group_cardinality_estimate, 1)
    stride = round_up(max(state_bytes_per_group, 1), hardware.cache_line_bytes)
    if kind == StrategyKind.DIRECT_ARRAY:
        if not dense_domain_ok(dense_domain):
            raise KernelContractError("direct_array requires a dense key domain")
        return AggregationStrategy(kind=kind, domain=list(dense_domain), stride_bytes=stride,
                                   estimated_groups=group_cardinality_estimate,
                                   state_bytes=state_bytes_per_group)
    level = "l2" if groups * state_bytes_per_group <= hardware.l2_bytes else "l3"
    return AggregationStrategy(kind=kind, capacity=capacity_for(groups, load_factor_cap), cache_level=level,
                               estimated_groups=group_cardinality_estimate, state_bytes=state_bytes_per_group)
