"""
The measurement queue: every execution that touches the machine (timed runs,
oracle checks, storage changes) goes through one FIFO consumer, so no two of them
overlap while agent work for other queries carries on.
"""
import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, List, Mapping, Optional, Tuple

from querysynth.errors import QueryTimeout, QueueShutdown
from querysynth.kernels.morsel import Deadline
from querysynth.models.results import TimingSummary
from querysynth.planner.executor import execute_plan
from querysynth.planner.physical import PhysicalPlan
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)


@dataclass
class MeasurementJob:
    label: str
    fn: Callable[[], Any]
    done: asyncio.Future
    seq: int
    begin: Optional[float] = None
    end: Optional[float] = None


@dataclass
class JobInterval:
    label: str
    seq: int
    begin: float
    end: float


class MeasurementQueue:
    """Single consumer; `fn` runs in a worker thread, one job at a time."""

    def __init__(self):
        self._queue: Optional[asyncio.Queue] = None
        self._worker: Optional[asyncio.Task] = None
        self._closed = False
        self._seq = 0
        self.lock = asyncio.Lock()
        self.intervals: List[JobInterval] = []

    @property
    def closed(self) -> bool:
        return self._closed

    async def submit(self, label: str, fn: Callable[[], Any]) -> asyncio.Future:
        """Enqueue a job; the returned future resolves when it has run."""
        async with self.lock:
            if self._closed:
                raise QueueShutdown(f"measurement queue is shut down; '{label}' rejected")
            if self._queue is None:
                self._queue = asyncio.Queue()
                self._worker = asyncio.create_task(self._consume(), name="measurement-queue")
            self._seq += 1
            job = MeasurementJob(label=label, fn=fn, done=asyncio.get_running_loop().create_future(),
                                 seq=self._seq)
            self._queue.put_nowait(job)
        return job.done

    async def run(self, label: str, fn: Callable[[], Any]) -> Any:
        return await (await self.submit(label, fn))

    async def _consume(self) -> None:
        while True:
            job = await self._queue.get()
            if job is None:
                return
            if job.done.cancelled():
                continue
            job.begin = time.perf_counter()
            try:
                result = await asyncio.to_thread(job.fn)
            except Exception as exc:
                job.end = time.perf_counter()
                if not job.done.done():
                    job.done.set_exception(exc)
            else:
                job.end = time.perf_counter()
                if not job.done.done():
                    job.done.set_result(result)
            self.intervals.append(JobInterval(job.label, job.seq, job.begin, job.end))

    async def shutdown(self) -> None:
        """Reject new jobs, cancel pending ones, let the running one finish."""
        async with self.lock:
            if self._closed:
                return
            self._closed = True
            if self._queue is None:
                return
            pending = 0
            while not self._queue.empty():
                job = self._queue.get_nowait()
                if job is not None and not job.done.done():
                    job.done.set_exception(QueueShutdown(f"'{job.label}' cancelled by shutdown"))
                    pending += 1
            if pending:
                logger.warning("⚠️ measurement queue shut down with %d pending job(s)", pending)
            self._queue.put_nowait(None)
        if self._worker is not None:
            await self._worker

    async def __aenter__(self) -> "MeasurementQueue":
        return self

    async def __aexit__(self, *exc) -> None:
        await self.shutdown()


# ===================================================================
# HOT RUNS
# ===================================================================

def measure_hot_run(run_once: Callable[[], Any], warmups: int, repeats: int) -> TimingSummary:
    """warmups unmeasured executions, then `repeats` timed ones; a timeout anywhere voids the summary."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    samples: List[float] = []
    try:
        for _ in range(warmups):
            run_once()
        for _ in range(repeats):
            started = time.perf_counter()
            run_once()
            samples.append((time.perf_counter() - started) * 1000.0)
    except QueryTimeout:
        return TimingSummary.timed_out(samples, warmups=warmups)
    return TimingSummary.from_samples(samples, warmups=warmups)


def plan_runner(plan: PhysicalPlan, tables: Mapping[str, ColumnarTable],
                query_timeout: Optional[float]) -> Callable[[], Tuple]:
    def run_once():
        return execute_plan(plan, tables, Deadline(query_timeout))
    return run_once
