"""
Benchmark runs: load storage, profile the workload, run one optimization pipeline
per query (bounded concurrency, one shared measurement queue), write the report.
"""
import asyncio
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from querysynth.analyzer.hardware import probe_hardware
from querysynth.analyzer.profile import build_workload_profile, save_profile
from querysynth.config import storage_settings
from querysynth.errors import ConfigError, FatalBaselineMismatch, QuerySynthError
from querysynth.models.catalog import Catalog, load_catalog
from querysynth.models.messages import Stage
from querysynth.models.profile import WorkloadProfile
from querysynth.models.report import BenchReport, QueryReport
from querysynth.models.results import TimingSummary
from querysynth.models.run import RunConfig
from querysynth.planner.executor import ExecutionOutcome
from querysynth.services.agents import StageCall, run_stage
from querysynth.services.cost import CostLedger
from querysynth.services.llm import ChatBackend, ScriptedReplayBackend, make_backend
from querysynth.services.measurement import MeasurementQueue
from querysynth.services.optimizer import (STAGE_FAILURES, LoopEnv, Measure, budget_stopped_state, hot_run,
                                           run_optimization_loop)
from querysynth.services.prompts import workload_sections
from querysynth.services.runs import RunDirectory
from querysynth.services.storage_designer import StorageDesignLog
from querysynth.sql.binder import BoundQuery, bind_and_validate
from querysynth.sql.parser import parse_sql
from querysynth.storage.persist import load_tables, stored_table_names
from querysynth.storage.table import ColumnarTable

logger = logging.getLogger(__name__)


@dataclass
class Workspace:
    catalog: Catalog
    tables: Dict[str, ColumnarTable]


def load_workspace(config: RunConfig) -> Workspace:
    data_dir = Path(config.data_dir)
    names = stored_table_names(data_dir)
    if not names:
        raise ConfigError(f"no stored tables under {data_dir}; run `ingest` or `generate` first")
    tables = load_tables(data_dir, names, use_mmap=storage_settings().use_mmap)
    if config.schema_file is not None:
        catalog = load_catalog(config.schema_file)
        missing = sorted(set(catalog.tables) - set(tables))
        if missing:
            raise ConfigError(f"tables {missing} are in {config.schema_file} but not stored under {data_dir}")
    else:
        catalog = Catalog(tables={n: t.schema for n, t in tables.items()})
    return Workspace(catalog=catalog, tables=tables)


def query_id_for(path: Path) -> str:
    return Path(path).stem


def load_query(path: Path, catalog: Catalog) -> BoundQuery:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"query file {path} not found")
    return bind_and_validate(parse_sql(path.read_text(encoding="utf-8")), catalog, query_id_for(path))


def load_queries(paths: List[Path], catalog: Catalog) -> Tuple[Dict[str, BoundQuery], Dict[str, str]]:
    """Bound queries by id, plus per-query errors (those queries are reported failed)."""
    bound: Dict[str, BoundQuery] = {}
    errors: Dict[str, str] = {}
    for path in paths:
        qid = query_id_for(path)
        if qid in bound or qid in errors:
            raise ConfigError(f"two query files share the id '{qid}'")
        try:
            bound[qid] = load_query(path, catalog)
        except ConfigError:
            raise
        except QuerySynthError as exc:
            logger.error("❌ %s: %s", qid, exc)
            errors[qid] = f"{type(exc).__name__}: {exc}"
    return bound, errors


async def analyze_workload(call: StageCall, profile: WorkloadProfile, queries: Dict[str, BoundQuery],
                           tables: Dict[str, ColumnarTable], agent_timeout: float) -> Optional[dict]:
    try:
        message = await run_stage(Stage.WORKLOAD_ANALYSIS, call, workload_sections(profile, queries, tables),
                                  agent_timeout)
    except STAGE_FAILURES as exc:
        logger.warning("⚠️ workload analysis skipped: %s", exc)
        return None
    return message.payload.model_dump(mode="json")


async def run_benchmark(config: RunConfig, *, backend: Optional[ChatBackend] = None,
                        measure: Optional[Measure] = None, replay_of: Optional[str] = None,
                        workspace: Optional[Workspace] = None) -> Tuple[BenchReport, RunDirectory]:
    if not config.queries:
        raise ConfigError("no query files given")
    ws = workspace or load_workspace(config)
    queries, errors = load_queries(config.queries, ws.catalog)

    run = RunDirectory.create(config.runs_dir, config.run_id)
    run.save_config(config)
    profile = build_workload_profile(ws.tables, list(queries.values()), probe_hardware())
    save_profile(profile, run.root / "profile.json")

    backend = backend or make_backend(config.backend)
    ledger = CostLedger(prices=config.prices, token_budget=config.budgets.token_budget,
                        dollar_budget=config.budgets.dollar_budget)
    call = StageCall(backend=backend, ledger=ledger, audit=run.audit)
    storage_log = StorageDesignLog()
    reports: Dict[str, QueryReport] = {qid: QueryReport.failed(qid, err) for qid, err in errors.items()}

    async with MeasurementQueue() as queue:
        analysis = await analyze_workload(call, profile, queries, ws.tables, config.budgets.agent_timeout) \
            if queries else None
        env = LoopEnv(catalog=ws.catalog, tables=ws.tables, profile=profile, config=config, queue=queue,
                      call=call, analysis=analysis, storage_log=storage_log, plan_sink=run.write_plan,
                      measure=measure)
        gate = asyncio.Semaphore(config.max_concurrent_pipelines)

        async def pipeline(qid: str, query: BoundQuery) -> None:
            async with gate:
                if ledger.exhausted:
                    logger.warning("💸 %s not started: %s", qid, ledger.breach)
                    reports[qid] = QueryReport.budget_stopped(budget_stopped_state(query, config, ledger.breach))
                    return
                try:
                    outcome = await run_optimization_loop(query, env)
                except FatalBaselineMismatch as exc:
                    reports[qid] = QueryReport.failed(qid, str(exc))
                    return
                except QuerySynthError as exc:
                    logger.error("❌ %s failed: %s", qid, exc)
                    reports[qid] = QueryReport.failed(qid, f"{type(exc).__name__}: {exc}")
                    return
                reports[qid] = QueryReport.from_outcome(outcome)

        await asyncio.gather(*(pipeline(qid, q) for qid, q in queries.items()))

    run.write_artifact("storage_design.json", {"changes": storage_log.model_dump(mode="json")["changes"],
                                               "final": storage_log.final_state(ws.tables)})
    report = BenchReport(
        run_id=run.run_id,
        backend=getattr(backend, "kind", type(backend).__name__),
        model=backend.model,
        queries=[reports[query_id_for(p)] for p in config.queries],
        cost=ledger.summary(),
        replay_of=replay_of,
    )
    run.write_report(report)
    logger.info("📝 report written to %s", run.report_json)
    return report, run


# ===================================================================
# REPLAY
# ===================================================================

def recorded_timings(report: BenchReport) -> Dict[Tuple[str, int], TimingSummary]:
    out = {}
    for q in report.queries:
        for row in q.iterations:
            if row.median_ms is not None:
                out[(q.query_id, row.iteration)] = TimingSummary.from_samples(row.samples_ms or [row.median_ms])
    return out


async def replay_run(run_dir: Path, runs_dir: Optional[Path] = None) -> Tuple[BenchReport, BenchReport, RunDirectory]:
    """
    Re-run a finished run from its transcript.

    Plans are executed, oracle-checked and timed again, but the recorded medians
    decide best iterations and early stops, so the control flow matches the original.
    Returns (original report, replay report, replay run directory).
    """
    source = RunDirectory.open(run_dir)
    original = source.load_report()
    config = source.load_config().model_copy(deep=True)
    config.backend.kind = "scripted_replay"
    config.backend.transcript = source.transcript
    config.run_id = None
    if runs_dir is not None:
        config.runs_dir = runs_dir
    backend = ScriptedReplayBackend.from_file(source.transcript, model=original.model)
    recorded = recorded_timings(original)
    ws = load_workspace(config)

    def measure(outcome: ExecutionOutcome, iteration: int) -> TimingSummary:
        query = outcome.plan.query
        fresh = hot_run(query, outcome, ws.tables, config)
        kept = recorded.get((query.query_id, iteration))
        if kept is None:
            return fresh
        logger.info("🔁 %s it%d recorded %.3f ms, now %s ms", query.query_id, iteration, kept.median_ms,
                    f"{fresh.median_ms:.3f}" if fresh.median_ms is not None else "timeout")
        return kept

    report, run = await run_benchmark(config, backend=backend, measure=measure, replay_of=source.run_id,
                                      workspace=ws)
    return original, report, run
