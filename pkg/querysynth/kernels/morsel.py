"""
Morsel-driven parallelism: fixed-size row ranges handed out by an atomic counter.
"""
import itertools
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, TypeVar

from querysynth.errors import KernelContractError, QueryTimeout

DEFAULT_MORSEL_SIZE = 65536

R = TypeVar("R")


@dataclass(frozen=True)
class Morsel:
    start: int
    end: int

    @property
    def size(self) -> int:
        return self.end - self.start


def make_morsels(row_count: int, morsel_size: int = DEFAULT_MORSEL_SIZE) -> List[Morsel]:
    """Non-overlapping cover of [0, row_count)."""
    if morsel_size < 1:
        raise KernelContractError("morsel_size must be >= 1")
    return [Morsel(s, min(s + morsel_size, row_count)) for s in range(0, row_count, morsel_size)]


class Deadline:
    """Wall-clock limit checked cooperatively at morsel boundaries."""

    def __init__(self, limit_s: Optional[float] = None):
        self.limit_s = limit_s
        self.started = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def expired(self) -> bool:
        return self.limit_s is not None and self.elapsed > self.limit_s

    def check(self) -> None:
        if self.expired():
            raise QueryTimeout(self.limit_s, self.elapsed)


NO_DEADLINE = Deadline(None)


def run_morsels(fn: Callable[[int, Morsel], R], morsels: List[Morsel], thread_count: int = 1,
                deadline: Deadline = NO_DEADLINE) -> List[R]:
    """
    Run fn(thread_id, morsel) over all morsels; results come back in morsel order.

    Workers pull the next morsel index from a shared counter, so faster threads
    take more morsels. The first failure stops every worker at its next boundary.
    """
    results: List[Optional[R]] = [None] * len(morsels)
    counter = itertools.count()  # next() is atomic under the GIL
    stop = threading.Event()

    def worker(thread_id: int) -> None:
        while not stop.is_set():
            i = next(counter)
            if i >= len(morsels):
                return
            try:
                deadline.check()
                results[i] = fn(thread_id, morsels[i])
            except BaseException:
                stop.set()
                raise

    threads = max(1, min(thread_count, len(morsels)))
    if threads == 1:
        worker(0)
        return results
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="morsel") as pool:
        futures = [pool.submit(worker, t) for t in range(threads)]
        errors = []
        for f in futures:
            try:
                f.result()
            except BaseException as exc:  # noqa: B902
                errors.append(exc)
    if errors:
        timeouts = [e for e in errors if isinstance(e, QueryTimeout)]
        raise (timeouts[0] if timeouts else errors[0])
    return results
