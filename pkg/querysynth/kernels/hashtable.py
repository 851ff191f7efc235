"""
Open-addressing hash tables with linear probing.

Keys, payloads and the occupancy bitmap live in separate arrays, so a probe
touches only the key array until it hits. Capacity is a power of two and the
occupancy never exceeds `load_factor_cap`, which leaves at least one empty slot:
every probe loop stops within `capacity` steps.
"""
import logging
from typing import Optional, Tuple

import numpy as np

from querysynth.errors import KernelContractError
from querysynth.kernels.hashing import HashFn, capacity_for, hash64, hash_columns, home_slots

logger = logging.getLogger(__name__)

DEFAULT_LOAD_FACTOR_CAP = 0.7


def place_linear(homes: np.ndarray, capacity: int) -> np.ndarray:
    """
    Slots that sequential linear-probing inserts (in home order) would give a
    batch of keys entering an empty table.

    Sorted by home, slot_i = max(home_i, slot_{i-1} + 1), i.e. a running maximum
    of home_i - i shifted back by i. Runs past the end wrap into the first free
    slots from 0.
    """
    n = int(homes.shape[0])
    if n >= capacity:
        raise KernelContractError(f"{n} keys cannot fit {capacity} slots with an empty slot left")
    order = np.argsort(homes, kind="stable")
    idx = np.arange(n, dtype=np.int64)
    placed = np.maximum.accumulate(homes[order] - idx) + idx if n else idx
    wrapped = placed >= capacity
    if wrapped.any():
        used = np.zeros(capacity, dtype=bool)
        used[placed[~wrapped]] = True
        placed[wrapped] = np.flatnonzero(~used)[: int(wrapped.sum())]
    slots = np.empty(n, dtype=np.int64)
    slots[order] = placed
    return slots


# ===================================================================
# JOIN TABLE (multimap)
# ===================================================================

class JoinHashTable:
    """Build side of a hash join: int64 keys to int64 payloads (row positions), duplicates kept."""

    def __init__(self, capacity: int, load_factor_cap: float = DEFAULT_LOAD_FACTOR_CAP,
                 seed: int = 0, hash_fn: HashFn = hash64):
        if not 0.0 < load_factor_cap < 1.0:
            raise ValueError("load_factor_cap must lie in (0, 1)")
        if capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two")
        self.capacity = capacity
        self.load_factor_cap = load_factor_cap
        self.seed = seed
        self.hash_fn = hash_fn
        self.keys = np.zeros(capacity, dtype=np.int64)
        self.payloads = np.full(capacity, -1, dtype=np.int64)
        self.occupied = np.zeros(capacity, dtype=bool)
        self.count = 0
        self.resizes = 0

    @classmethod
    def build(cls, keys: np.ndarray, payloads: np.ndarray,
              load_factor_cap: float = DEFAULT_LOAD_FACTOR_CAP, seed: int = 0,
              hash_fn: HashFn = hash64) -> "JoinHashTable":
        keys = np.asarray(keys, dtype=np.int64)
        payloads = np.asarray(payloads, dtype=np.int64)
        if keys.shape != payloads.shape:
            raise KernelContractError("keys and payloads differ in length")
        table = cls(capacity_for(len(keys), load_factor_cap), load_factor_cap, seed, hash_fn)
        table._place_all(keys, payloads)
        return table

    @property
    def load_factor(self) -> float:
        return self.count / self.capacity

    @property
    def memory_bytes(self) -> int:
        return self.keys.nbytes + self.payloads.nbytes + self.occupied.nbytes

    def entries(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.keys[self.occupied], self.payloads[self.occupied]

    def insert(self, keys: np.ndarray, payloads: np.ndarray) -> None:
        """Add entries; doubles and rehashes whenever the cap would be exceeded."""
        keys = np.asarray(keys, dtype=np.int64)
        payloads = np.asarray(payloads, dtype=np.int64)
        old_keys, old_payloads = self.entries()
        total = self.count + len(keys)
        capacity = self.capacity
        while total > self.load_factor_cap * capacity:
            capacity <<= 1
        if capacity != self.capacity:
            logger.debug("join table resize %d -> %d for %d entries", self.capacity, capacity, total)
            self.resizes += 1
            self.capacity = capacity
        self.keys = np.zeros(capacity, dtype=np.int64)
        self.payloads = np.full(capacity, -1, dtype=np.int64)
        self.occupied = np.zeros(capacity, dtype=bool)
        self.count = 0
        self._place_all(np.concatenate([old_keys, keys]), np.concatenate([old_payloads, payloads]))

    def _place_all(self, keys: np.ndarray, payloads: np.ndarray) -> None:
        if len(keys) == 0:
            return
        slots = place_linear(home_slots(self.hash_fn(keys, self.seed), self.capacity), self.capacity)
        self.keys[slots] = keys
        self.payloads[slots] = payloads
        self.occupied[slots] = True
        self.count = int(len(keys))

    def probe(self, probe_keys: np.ndarray, selection: Optional[np.ndarray] = None,
              prefetch_batch: int = 1024) -> Tuple[np.ndarray, np.ndarray]:
        """
        All (probe row, payload) matches, sorted by probe row then probe order.

        Home slots for a batch of `prefetch_batch` probe keys are computed before
        any slot is read; the batch then advances in lockstep until every probe
        has reached an empty slot.
        """
        if prefetch_batch < 1:
            raise KernelContractError("prefetch_batch must be >= 1")
        probe_keys = np.asarray(probe_keys, dtype=np.int64)
        rows = np.arange(len(probe_keys), dtype=np.int64) if selection is None else np.asarray(selection, dtype=np.int64)
        if rows.size == 0 or self.count == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy()

        mask = self.capacity - 1
        out_rows, out_steps, out_payloads = [], [], []
        for start in range(0, len(rows), prefetch_batch):
            batch_rows = rows[start:start + prefetch_batch]
            batch_keys = probe_keys[batch_rows]
            slots = home_slots(self.hash_fn(batch_keys, self.seed), self.capacity)
            active = np.arange(len(batch_rows), dtype=np.int64)
            step = 0
            while active.size:
                if step > self.capacity:
                    raise KernelContractError("probe exceeded table capacity (no empty slot)")
                occupied = self.occupied[slots]
                hit = occupied & (self.keys[slots] == batch_keys[active])
                if hit.any():
                    out_rows.append(batch_rows[active[hit]])
                    out_steps.append(np.full(int(hit.sum()), step, dtype=np.int64))
                    out_payloads.append(self.payloads[slots[hit]])
                active = active[occupied]
                slots = (slots[occupied] + 1) & mask
                step += 1
        if not out_rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy()
        r = np.concatenate(out_rows)
        s = np.concatenate(out_steps)
        p = np.concatenate(out_payloads)
        order = np.lexsort((s, r))
        return r[order], p[order]


# ===================================================================
# AGGREGATION TABLE (unique keys -> dense group ids)
# ===================================================================

class AggHashTable:
    """
    Multi-column int64 keys mapped to dense group ids 0..count-1.

    Group ids never change once assigned, across resizes too.
    """

    def __init__(self, width: int, capacity: int = 16, load_factor_cap: float = DEFAULT_LOAD_FACTOR_CAP,
                 seed: int = 0, hash_fn: HashFn = hash64):
        if width < 1:
            raise KernelContractError("aggregation keys need at least one column")
        self.width = width
        self.capacity = capacity_for(0, load_factor_cap) if capacity < 2 else capacity
        if self.capacity & (self.capacity - 1):
            raise ValueError("capacity must be a power of two")
        self.load_factor_cap = load_factor_cap
        self.seed = seed
        self.hash_fn = hash_fn
        self.keys = np.zeros((self.capacity, width), dtype=np.int64)
        self.gids = np.full(self.capacity, -1, dtype=np.int64)
        self.occupied = np.zeros(self.capacity, dtype=bool)
        self.count = 0
        self.resizes = 0
        self._by_gid = np.zeros((0, width), dtype=np.int64)

    @property
    def load_factor(self) -> float:
        return self.count / self.capacity

    @property
    def memory_bytes(self) -> int:
        return self.keys.nbytes + self.gids.nbytes + self.occupied.nbytes

    def group_keys(self) -> np.ndarray:
        """(count, width) key rows indexed by group id."""
        return self._by_gid

    def _homes(self, keys: np.ndarray) -> np.ndarray:
        return home_slots(hash_columns(keys, self.seed, self.hash_fn), self.capacity)

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Group id per key row, -1 when absent."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, self.width)
        out = np.full(len(keys), -1, dtype=np.int64)
        if self.count == 0 or len(keys) == 0:
            return out
        mask = self.capacity - 1
        slots = self._homes(keys)
        active = np.arange(len(keys), dtype=np.int64)
        step = 0
        while active.size:
            if step > self.capacity:
                raise KernelContractError("probe exceeded table capacity (no empty slot)")
            occupied = self.occupied[slots]
            equal = occupied & (self.keys[slots] == keys[active]).all(axis=1)
            out[active[equal]] = self.gids[slots[equal]]
            go_on = occupied & ~equal
            active = active[go_on]
            slots = (slots[go_on] + 1) & mask
            step += 1
        return out

    def find_or_insert(self, keys: np.ndarray) -> np.ndarray:
        """Group id per key row; unseen keys get new ids in ascending key order."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, self.width)
        if len(keys) == 0:
            return np.zeros(0, dtype=np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        gids = self.lookup(uniq)
        missing = gids < 0
        if missing.any():
            new_keys = uniq[missing]
            new_ids = np.arange(self.count, self.count + len(new_keys), dtype=np.int64)
            self._reserve(self.count + len(new_keys))
            self._insert_new(new_keys, new_ids)
            self._by_gid = np.concatenate([self._by_gid, new_keys])
            gids[missing] = new_ids
        return gids[inverse.reshape(-1)]

    def _reserve(self, total: int) -> None:
        if total <= self.load_factor_cap * self.capacity:
            return
        capacity = capacity_for(total, self.load_factor_cap)
        logger.debug("aggregation table resize %d -> %d", self.capacity, capacity)
        keys, gids = self.keys[self.occupied], self.gids[self.occupied]
        self.capacity = capacity
        self.keys = np.zeros((capacity, self.width), dtype=np.int64)
        self.gids = np.full(capacity, -1, dtype=np.int64)
        self.occupied = np.zeros(capacity, dtype=bool)
        self.resizes += 1
        if len(keys):
            slots = place_linear(self._homes(keys), capacity)
            self.keys[slots] = keys
            self.gids[slots] = gids
            self.occupied[slots] = True

    def _insert_new(self, keys: np.ndarray, ids: np.ndarray) -> None:
        """Insert keys known to be absent; the first claimant of a free slot wins it."""
        mask = self.capacity - 1
        slots = self._homes(keys)
        pending = np.arange(len(keys), dtype=np.int64)
        step = 0
        while pending.size:
            if step > self.capacity:
                raise KernelContractError("insert exceeded table capacity (no empty slot)")
            free = np.flatnonzero(~self.occupied[slots])
            if free.size:
                _, first = np.unique(slots[free], return_index=True)
                winners = free[first]
                won_slots = slots[winners]
                self.keys[won_slots] = keys[pending[winners]]
                self.gids[won_slots] = ids[pending[winners]]
                self.occupied[won_slots] = True
                self.count += int(winners.size)
                remaining = np.ones(pending.size, dtype=bool)
                remaining[winners] = False
                pending = pending[remaining]
                slots = slots[remaining]
            slots = (slots + 1) & mask
            step += 1
