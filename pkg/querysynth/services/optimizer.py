"""
The per-query optimize-measure-refine loop.

Iteration 0 is always the default plan; later iterations come from the planner
agent (iteration 1, after the storage designer) and the optimizer agent. Every
iteration is checked against the oracle before it is timed, and only correct
iterations can become the best.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

from querysynth.errors import (AgentTimeout, BackendTransportError, BudgetExceeded, DecisionRejected,
                               FatalBaselineMismatch, SchemaViolation, TranscriptExhausted)
from querysynth.models.catalog import Catalog
from querysynth.models.messages import Stage
from querysynth.models.plan import Diagnostic, PlanDecisionSet
from querysynth.models.profile import WorkloadProfile
from querysynth.models.results import TimingSummary
from querysynth.models.run import RunConfig
from querysynth.models.state import (FeedbackRecord, IterationRecord, OptimizationOutcome, OptimizationState,
                                     StopReason, Verdict)
from querysynth.planner.defaults import default_decisions
from querysynth.planner.executor import ExecutionOutcome, compile_and_execute, snapshot_tables, tables_read
from querysynth.planner.validate import validate_decisions
from querysynth.reference.compare import compare_results
from querysynth.reference.executor import execute_reference
from querysynth.reference.resultset import ResultSet
from querysynth.services.agents import StageCall, run_stage
from querysynth.services.measurement import MeasurementQueue, measure_hot_run, plan_runner
from querysynth.services.prompts import query_sections
from querysynth.services.storage_designer import StorageDesignLog, apply_storage_requests
from querysynth.sql.binder import BoundQuery
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)

STAGE_FAILURES = (SchemaViolation, AgentTimeout, TranscriptExhausted, BackendTransportError)

Execute = Callable[[PlanDecisionSet], ExecutionOutcome]
Measure = Callable[[ExecutionOutcome, int], TimingSummary]
PlanSink = Callable[[str, int, str], None]


@dataclass
class LoopEnv:
    catalog: Catalog
    tables: Dict[str, ColumnarTable]
    profile: WorkloadProfile
    config: RunConfig
    queue: MeasurementQueue
    call: StageCall
    analysis: Optional[dict] = None
    storage_log: Optional[StorageDesignLog] = None
    plan_sink: Optional[PlanSink] = None
    # test seams: replace plan execution or hot-run timing
    execute: Optional[Callable[[BoundQuery], Execute]] = None
    measure: Optional[Measure] = None


@dataclass
class _Run:
    query: BoundQuery
    env: LoopEnv
    state: OptimizationState
    expected: Optional[ResultSet] = None
    plans: Dict[int, ExecutionOutcome] = field(default_factory=dict)

    @property
    def qid(self) -> str:
        return self.query.query_id or "query"

    # -----------------------------------------------------------------
    # execution side (always through the queue)
    # -----------------------------------------------------------------

    def _execute(self, decisions: PlanDecisionSet) -> ExecutionOutcome:
        if self.env.execute is not None:
            return self.env.execute(self.query)(decisions)
        return compile_and_execute(self.query, decisions, self.env.tables, self.env.profile.hardware,
                                   profile=self.env.profile,
                                   query_timeout=self.env.config.budgets.query_timeout)

    def _measure(self, outcome: ExecutionOutcome, iteration: int) -> TimingSummary:
        if self.env.measure is not None:
            return self.env.measure(outcome, iteration)
        return hot_run(self.query, outcome, self.env.tables, self.env.config)

    async def oracle(self) -> ResultSet:
        def run():
            snapshot = snapshot_tables(self.env.tables, tables_read(self.query))
            return execute_reference(self.query, snapshot)
        self.expected = await self.env.queue.run(f"{self.qid}/oracle", run)
        return self.expected

    async def evaluate(self, iteration: int, source: str, decisions: PlanDecisionSet,
                       diagnostics: List[Diagnostic], changes: List[str]) -> IterationRecord:
        label = f"{self.qid}/it{iteration}"
        outcome = await self.env.queue.run(label, lambda: self._execute(decisions))
        self.plans[iteration] = outcome
        if outcome.plan is not None and self.env.plan_sink is not None:
            self.env.plan_sink(self.qid, iteration, outcome.plan.render())

        if outcome.status == "timeout":
            feedback = FeedbackRecord(verdict=Verdict.TIMEOUT, timing=TimingSummary.timed_out(),
                                      diagnostics=diagnostics)
        elif not outcome.ok:
            feedback = FeedbackRecord(verdict=Verdict.ERROR, diagnostics=diagnostics, mismatch=outcome.error)
        else:
            report = compare_results(self.expected, outcome.result, self.env.config.tolerances)
            if not report.matched:
                feedback = FeedbackRecord(verdict=Verdict.INCORRECT, operator_stats=outcome.stats.digest(),
                                          diagnostics=diagnostics, mismatch=report.message)
            else:
                timing = await self.env.queue.run(f"{label}/measure", lambda: self._measure(outcome, iteration))
                verdict = Verdict.CORRECT if timing.status == "ok" else Verdict.TIMEOUT
                feedback = FeedbackRecord(verdict=verdict, timing=timing,
                                          operator_stats=outcome.stats.digest(), diagnostics=diagnostics)
        return IterationRecord(iteration=iteration, source=source, decisions=decisions,
                               feedback=feedback, storage_changes=changes, error=outcome.error)

    def add(self, record: IterationRecord) -> None:
        became_best = self.state.add(record)
        it = record.iteration
        if record.selectable:
            logger.info("✅ %s it%d correct, median %.3f ms%s", self.qid, it, record.median_ms,
                        " (new best)" if became_best else "")
        else:
            logger.warning("❌ %s it%d %s%s", self.qid, it, record.verdict.value,
                           f": {record.error}" if record.error else "")
            if self.state.best_iteration is not None and it > 0:
                logger.info("↩️ %s rolling back to best iteration %d", self.qid, self.state.best_iteration)

    # -----------------------------------------------------------------
    # agent side
    # -----------------------------------------------------------------

    def sections(self, with_defaults: bool):
        env = self.env
        baseline = self.state.records[0].decisions.model_dump(mode="json") if with_defaults else None
        return query_sections(self.query, env.profile, env.tables, analysis=env.analysis,
                              state_digest=self.state.digest(), defaults=baseline)

    async def storage_design(self, iteration: int) -> List[str]:
        env = self.env
        try:
            message = await run_stage(Stage.STORAGE_DESIGN, env.call, self.sections(True),
                                      env.config.budgets.agent_timeout, query_id=self.qid, iteration=iteration)
        except STAGE_FAILURES as exc:
            logger.warning("⚠️ %s storage design skipped: %s", self.qid, exc)
            return []
        design = message.payload
        probe = PlanDecisionSet(join_order=self.state.records[0].decisions.join_order,
                                encoding_requests=design.encoding_requests,
                                index_requests=design.index_requests)
        checked = validate_decisions(probe, self.query, env.catalog, env.tables)
        if checked.rejected:
            return []
        return await self.apply_requests(iteration, checked.decisions)

    async def apply_requests(self, iteration: int, decisions: PlanDecisionSet) -> List[str]:
        if not decisions.encoding_requests and not decisions.index_requests:
            return []
        changes = await self.env.queue.run(
            f"{self.qid}/it{iteration}/storage",
            lambda: apply_storage_requests(self.env.tables, decisions.encoding_requests, decisions.index_requests))
        if changes and self.env.storage_log is not None:
            self.env.storage_log.record(self.qid, iteration, changes)
        return changes

    async def propose(self, iteration: int) -> None:
        env = self.env
        changes: List[str] = []
        if iteration == 1:
            changes += await self.storage_design(iteration)
            stage, source = Stage.PLAN_DECISION, "plan_decision"
        else:
            stage, source = Stage.OPTIMIZER_FEEDBACK, "optimizer_feedback"

        try:
            message = await run_stage(stage, env.call, self.sections(stage == Stage.PLAN_DECISION),
                                      env.config.budgets.agent_timeout, query_id=self.qid, iteration=iteration)
        except STAGE_FAILURES as exc:
            self.add(IterationRecord(iteration=iteration, source=source, storage_changes=changes,
                                     feedback=FeedbackRecord(verdict=Verdict.STAGE_FAILED), error=str(exc)))
            return

        checked = validate_decisions(message.decisions(), self.query, env.catalog, env.tables)
        if checked.rejected:
            self.add(IterationRecord(iteration=iteration, source=source, decisions=message.decisions(),
                                     storage_changes=changes,
                                     feedback=FeedbackRecord(verdict=Verdict.REJECTED,
                                                             diagnostics=checked.diagnostics),
                                     error=str(DecisionRejected(checked.diagnostics))))
            return
        changes += await self.apply_requests(iteration, checked.decisions)
        self.add(await self.evaluate(iteration, source, checked.decisions, checked.diagnostics, changes))


def hot_run(query: BoundQuery, outcome: ExecutionOutcome, tables: Mapping[str, ColumnarTable],
            config: RunConfig) -> TimingSummary:
    snapshot = snapshot_tables(tables, tables_read(query))
    return measure_hot_run(plan_runner(outcome.plan, snapshot, config.budgets.query_timeout),
                           config.measurement.warmups, config.measurement.repeats)


def _baseline(query: BoundQuery, env: LoopEnv) -> PlanDecisionSet:
    decisions = default_decisions(query, env.profile, env.tables)
    if env.config.thread_count is not None:
        decisions = decisions.model_copy(update={"thread_count": env.config.thread_count})
    return decisions


async def run_optimization_loop(query: BoundQuery, env: LoopEnv) -> OptimizationOutcome:
    cfg = env.config
    state = OptimizationState(query_id=query.query_id or "query", max_iterations=cfg.budgets.max_iterations,
                              epsilon=cfg.epsilon, patience=cfg.patience, target_ms=cfg.target_ms)
    run = _Run(query=query, env=env, state=state)
    await run.oracle()

    baseline = await run.evaluate(0, "defaults", _baseline(query, env), [], [])
    if baseline.verdict not in (Verdict.CORRECT, Verdict.TIMEOUT):
        logger.error("❌ %s: default plan disagrees with the oracle: %s", run.qid,
                     baseline.feedback.mismatch or baseline.error)
        raise FatalBaselineMismatch(
            f"{run.qid}: default plan is not oracle-correct ({baseline.verdict.value}): "
            f"{baseline.feedback.mismatch or baseline.error}")
    run.add(baseline)

    while True:
        reason = state.should_stop()
        if reason is not None:
            state.stop(reason)
            break
        if env.call.ledger is not None and env.call.ledger.exhausted:
            state.stop(StopReason.BUDGET_STOPPED, env.call.ledger.breach)
            break
        try:
            await run.propose(state.next_iteration)
        except BudgetExceeded as exc:
            state.stop(StopReason.BUDGET_STOPPED, str(exc))
            break
    logger.info("🏁 %s stopped (%s) after %d iteration(s); best it%s", run.qid, state.stop_reason.value,
                len(state.records), state.best_iteration)
    return outcome_for(run)


def outcome_for(run: _Run) -> OptimizationOutcome:
    state = run.state
    best = state.best
    if best is None:
        logger.warning("⚠️ %s: no iteration was both correct and measured", state.query_id)
    chosen = run.plans.get(best.iteration) if best is not None else None
    plan = chosen.plan if chosen is not None else None
    return OptimizationOutcome(
        query_id=state.query_id,
        best_decisions=best.decisions if best is not None else None,
        plan_rendering=plan.render() if plan is not None else "",
        state=state,
        strategies=plan.strategies() if plan is not None else [],
        indexes_used=plan.indexes_used() if plan is not None else [],
    )


def budget_stopped_state(query: BoundQuery, config: RunConfig, detail: Optional[str]) -> OptimizationState:
    """State for a query the run never started because a budget ran out."""
    state = OptimizationState(query_id=query.query_id or "query", max_iterations=config.budgets.max_iterations)
    state.stop(StopReason.BUDGET_STOPPED, detail)
    return state
