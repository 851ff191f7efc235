import asyncio
import os
import time

import pytest
from typer.testing import CliRunner

from querysynth import __version__, jsonio
from querysynth.analyzer.profile import build_workload_profile
from querysynth.api.cli import EXIT_CONFIG, app
from querysynth.errors import ConfigError, FatalBaselineMismatch, QueryTimeout, QueueShutdown
from querysynth.models.messages import Stage
from querysynth.models.profile import HardwareProfile
from querysynth.models.report import BenchReport, IterationRow, QueryReport
from querysynth.models.results import TimingSummary
from querysynth.models.run import Budgets, Measurement, RunConfig, load_run_config
from querysynth.models.state import FeedbackRecord, IterationRecord, OptimizationState, StopReason, Verdict
from querysynth.planner.defaults import default_decisions
from querysynth.planner.executor import ExecutionOutcome, compile_and_execute
from querysynth.services.agents import StageCall, run_stage
from querysynth.services.bench import recorded_timings, replay_run, run_benchmark
from querysynth.services.cost import CostLedger
from querysynth.services.llm import RemoteChatBackend, ScriptedReplayBackend
from querysynth.services.measurement import MeasurementQueue, measure_hot_run
from querysynth.services.optimizer import LoopEnv, budget_stopped_state, run_optimization_loop
from querysynth.services.prompts import Section
from querysynth.services.runs import RunDirectory, render_markdown
from querysynth.services.storage_designer import StorageDesignLog
from querysynth.sql.binder import bind_and_validate
from querysynth.sql.parser import parse_sql

from tests.conftest import QUERIES_DIR

HARDWARE = HardwareProfile(core_count=2)
JOIN_SQL = ("SELECT r_name, SUM(s_amount) AS total FROM sales, regions "
            "WHERE s_region = r_id AND s_kind = 'retail' GROUP BY r_name ORDER BY r_name")
PLAN_A = '{"join_order": [{"table": "regions", "role": "base"}, {"table": "sales", "role": "build"}]}'
PLAN_B = PLAN_A[:-1] + ', "aggregation": "partitioned_hash"}'
NO_ORDER = '{"aggregation": "shared_cas"}'


def bind(sql, catalog, query_id="q"):
    return bind_and_validate(parse_sql(sql), catalog, query_id)


def script(*pairs):
    return ScriptedReplayBackend([{"stage": stage, "response_text": text} for stage, text in pairs])


def medians(values):
    """Measure seam: a fixed median per iteration."""
    def measure(outcome, iteration):
        return TimingSummary.from_samples([values[iteration]])
    return measure


def timing(ms):
    return FeedbackRecord(verdict=Verdict.CORRECT, timing=TimingSummary.from_samples([ms]))


def record(iteration, ms=None, verdict=Verdict.CORRECT):
    if verdict == Verdict.CORRECT:
        feedback = timing(ms)
    elif verdict == Verdict.TIMEOUT:
        feedback = FeedbackRecord(verdict=verdict, timing=TimingSummary.timed_out())
    else:
        feedback = FeedbackRecord(verdict=verdict)
    return IterationRecord(iteration=iteration, source="defaults" if iteration == 0 else "plan_decision",
                           feedback=feedback)


# ===================================================================
# MEASUREMENT QUEUE
# ===================================================================

class TestMeasurementQueue:
    def test_jobs_run_one_at_a_time_in_submission_order(self):
        async def go():
            async with MeasurementQueue() as queue:
                futures = [await queue.submit(f"job{i}", lambda i=i: time.sleep(0.01) or i) for i in range(4)]
                results = await asyncio.gather(*futures)
            return results, queue.intervals

        results, intervals = asyncio.run(go())
        assert results == [0, 1, 2, 3]
        assert [i.label for i in intervals] == ["job0", "job1", "job2", "job3"]
        for before, after in zip(intervals, intervals[1:]):
            assert after.begin >= before.end

    def test_job_errors_reach_the_caller(self):
        def boom():
            raise ValueError("bad plan")

        async def go():
            async with MeasurementQueue() as queue:
                with pytest.raises(ValueError):
                    await queue.run("boom", boom)
                return await queue.run("after", lambda: "still running")

        assert asyncio.run(go()) == "still running"

    def test_shutdown_rejects_new_and_cancels_pending_jobs(self):
        async def go():
            queue = MeasurementQueue()
            running = await queue.submit("running", lambda: time.sleep(0.2) or "done")
            await asyncio.sleep(0.05)
            pending = await queue.submit("pending", lambda: "never")
            await queue.shutdown()
            assert queue.closed
            assert await running == "done"
            with pytest.raises(QueueShutdown):
                await pending
            with pytest.raises(QueueShutdown):
                await queue.submit("late", lambda: None)
            return queue.intervals

        assert [i.label for i in asyncio.run(go())] == ["running"]

    def test_concurrent_pipelines_plan_together_and_measure_in_turn(self):
        planning = {}
        submitted, completed = [], []

        async def pipeline(queue, i):
            begin = time.perf_counter()
            await asyncio.sleep(0.2)
            planning[i] = (begin, time.perf_counter())
            futures = []
            for n in range(2):
                label = f"q{i}/{n}"
                future = await queue.submit(label, lambda: time.sleep(0.01))
                submitted.append(label)
                future.add_done_callback(lambda _f, label=label: completed.append(label))
                futures.append(future)
            await asyncio.gather(*futures)

        async def go():
            async with MeasurementQueue() as queue:
                await asyncio.gather(*(pipeline(queue, i) for i in range(8)))
            return queue.intervals

        intervals = asyncio.run(go())
        assert max(b for b, _ in planning.values()) < min(e for _, e in planning.values())
        assert len(intervals) == 16
        assert [i.label for i in intervals] == submitted
        assert completed == submitted
        assert [i.seq for i in intervals] == list(range(1, 17))
        ordered = sorted(intervals, key=lambda i: i.begin)
        for before, after in zip(ordered, ordered[1:]):
            assert after.begin >= before.end


# ===================================================================
# HOT RUNS
# ===================================================================

class TestHotRun:
    def test_warmups_are_not_sampled(self):
        calls = []
        summary = measure_hot_run(lambda: calls.append(1), warmups=2, repeats=5)
        assert len(calls) == 7
        assert len(summary.samples_ms) == 5
        assert summary.warmups == 2
        assert summary.status == "ok"
        assert summary.min_ms <= summary.median_ms

    def test_single_repeat_is_its_own_median(self):
        summary = measure_hot_run(lambda: None, warmups=0, repeats=1)
        assert summary.median_ms == summary.samples_ms[0] == summary.min_ms

    def test_repeats_must_be_positive(self):
        with pytest.raises(ValueError):
            measure_hot_run(lambda: None, warmups=1, repeats=0)

    def test_timeout_voids_the_summary(self):
        def slow():
            raise QueryTimeout(0.01, 0.02)

        summary = measure_hot_run(slow, warmups=1, repeats=3)
        assert summary.status == "timeout"
        assert summary.median_ms is None

    def test_median_of_samples(self):
        summary = TimingSummary.from_samples([10, 12, 11, 13, 11])
        assert summary.median_ms == 11
        assert summary.min_ms == 10


# ===================================================================
# OPTIMIZATION STATE
# ===================================================================

class TestOptimizationState:
    def state(self, **kwargs):
        return OptimizationState(query_id="q", **{"max_iterations": 10, **kwargs})

    def test_fastest_correct_iteration_is_best(self):
        state = self.state()
        for i, ms in enumerate([900, 300, 350]):
            state.add(record(i, ms))
        assert state.best_iteration == 1
        assert state.best_ms == 300

    def test_incorrect_and_timed_out_iterations_are_never_best(self):
        state = self.state()
        state.add(record(0, 900))
        state.add(record(1, verdict=Verdict.INCORRECT))
        state.add(record(2, verdict=Verdict.TIMEOUT))
        state.add(record(3, verdict=Verdict.STAGE_FAILED))
        assert state.best_iteration == 0
        assert state.stale_rounds == 3

    def test_small_gains_count_toward_patience(self):
        state = self.state(epsilon=0.05, patience=2)
        assert state.add(record(0, 100))
        assert state.add(record(1, 97))
        assert state.stale_rounds == 1
        assert state.should_stop() is None
        assert state.add(record(2, 96))
        assert state.best_iteration == 2
        assert state.should_stop() == StopReason.EARLY_STOP

    def test_real_gain_resets_patience(self):
        state = self.state(epsilon=0.05, patience=2)
        state.add(record(0, 100))
        state.add(record(1, verdict=Verdict.INCORRECT))
        state.add(record(2, 50))
        assert state.stale_rounds == 0

    def test_stop_checks_in_order(self):
        state = self.state(max_iterations=2, target_ms=500, patience=1)
        state.add(record(0, 900))
        state.add(record(1, verdict=Verdict.ERROR))
        assert state.should_stop() == StopReason.MAX_ITERATIONS
        state.add(record(2, 400))
        assert state.should_stop() == StopReason.TARGET_REACHED

    def test_first_stop_reason_sticks(self):
        state = self.state()
        state.stop(StopReason.BUDGET_STOPPED, "token budget")
        state.stop(StopReason.MAX_ITERATIONS)
        assert (state.stop_reason, state.stop_detail) == (StopReason.BUDGET_STOPPED, "token budget")


# ===================================================================
# THE LOOP
# ===================================================================

def optimize(query, tables, catalog, backend, config, *, measure=None, execute=None, ledger=None, audit=None):
    plans = []

    async def go():
        profile = build_workload_profile(tables, [query], HARDWARE)
        async with MeasurementQueue() as queue:
            env = LoopEnv(catalog=catalog, tables=tables, profile=profile, config=config, queue=queue,
                          call=StageCall(backend, ledger, audit), storage_log=StorageDesignLog(),
                          plan_sink=lambda q, it, text: plans.append(it), measure=measure, execute=execute)
            outcome = await run_optimization_loop(query, env)
        return outcome, queue.intervals

    outcome, intervals = asyncio.run(go())
    return outcome, intervals, plans


def loop_config(max_iterations=3, **kwargs):
    return RunConfig(budgets=Budgets(max_iterations=max_iterations, agent_timeout=10.0), **kwargs)


class TestOptimizationLoop:
    def test_full_run_over_a_scripted_transcript(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        backend = script(("storage_design", "{}"), ("plan_decision", PLAN_A), ("optimizer_feedback", PLAN_B))
        outcome, intervals, plans = optimize(query, sales_tables, sales_catalog, backend,
                                             loop_config(patience=5), measure=medians({0: 100, 1: 40, 2: 39}))
        state = outcome.state
        assert [r.source for r in state.records] == ["defaults", "plan_decision", "optimizer_feedback"]
        assert all(r.verdict == Verdict.CORRECT for r in state.records)
        assert state.best_iteration == 2
        assert state.stop_reason == StopReason.MAX_ITERATIONS
        assert outcome.best_decisions.aggregation == "partitioned_hash"
        assert outcome.strategies == ["partitioned_hash"]
        assert outcome.plan_rendering
        assert plans == [0, 1, 2]
        assert backend.remaining == 0
        assert intervals[0].label == "q/oracle"
        for before, after in zip(intervals, intervals[1:]):
            assert after.begin >= before.end

    def test_target_stops_the_loop(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        backend = script(("storage_design", "{}"), ("plan_decision", PLAN_A))
        outcome, _, _ = optimize(query, sales_tables, sales_catalog, backend, loop_config(5, target_ms=50),
                                 measure=medians({0: 100, 1: 40}))
        assert outcome.state.stop_reason == StopReason.TARGET_REACHED
        assert len(outcome.state.records) == 2

    def test_early_stop_after_small_gains(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        backend = script(("storage_design", "{}"), ("plan_decision", PLAN_A), ("optimizer_feedback", PLAN_B))
        outcome, _, _ = optimize(query, sales_tables, sales_catalog, backend, loop_config(10, patience=2),
                                 measure=medians({0: 100, 1: 99, 2: 98}))
        assert outcome.state.stop_reason == StopReason.EARLY_STOP
        assert outcome.state.best_iteration == 2

    def test_wrong_baseline_is_fatal(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        unfiltered = bind("SELECT r_name, SUM(s_amount) AS total FROM sales, regions "
                          "WHERE s_region = r_id GROUP BY r_name ORDER BY r_name", sales_catalog)

        def execute(q):
            return lambda d: compile_and_execute(unfiltered, default_decisions(unfiltered, None, sales_tables),
                                                 sales_tables, HARDWARE)

        with pytest.raises(FatalBaselineMismatch):
            optimize(query, sales_tables, sales_catalog, script(), loop_config(), execute=execute,
                     measure=medians({0: 1}))

    def test_failing_baseline_is_fatal(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        with pytest.raises(FatalBaselineMismatch):
            optimize(query, sales_tables, sales_catalog, script(), loop_config(),
                     execute=lambda q: lambda d: ExecutionOutcome(status="error", error="KernelContractError"))

    def test_baseline_timeout_is_tolerated(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        calls = []

        def execute(q):
            def run(d):
                calls.append(d)
                if len(calls) == 1:
                    return ExecutionOutcome(status="timeout", error="timed out")
                return compile_and_execute(q, d, sales_tables, HARDWARE)
            return run

        backend = script(("storage_design", "{}"), ("plan_decision", PLAN_A))
        outcome, _, _ = optimize(query, sales_tables, sales_catalog, backend, loop_config(2, patience=5),
                                 execute=execute, measure=medians({1: 40}))
        assert [r.verdict for r in outcome.state.records] == [Verdict.TIMEOUT, Verdict.CORRECT]
        assert outcome.state.best_iteration == 1

    def test_no_verified_plan_when_nothing_after_a_timed_out_baseline_is_correct(self, sales_tables,
                                                                                  sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        backend = script(("storage_design", "{}"), ("plan_decision", NO_ORDER), ("plan_decision", NO_ORDER))
        outcome, _, _ = optimize(query, sales_tables, sales_catalog, backend, loop_config(2, patience=5),
                                 execute=lambda q: lambda d: ExecutionOutcome(status="timeout", error="timed out"))
        assert [r.verdict for r in outcome.state.records] == [Verdict.TIMEOUT, Verdict.STAGE_FAILED]
        assert not outcome.verified
        assert outcome.best_decisions is None
        assert outcome.plan_rendering == ""
        report = QueryReport.from_outcome(outcome)
        assert report.status == "failed"
        assert report.best_iteration is None
        assert report.error

    def test_unrepaired_answer_is_a_failed_stage(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        audit = []
        backend = script(("storage_design", "{}"), ("plan_decision", NO_ORDER), ("plan_decision", NO_ORDER))
        outcome, _, plans = optimize(query, sales_tables, sales_catalog, backend, loop_config(2, patience=5),
                                     measure=medians({0: 100}), audit=audit.append)
        failed = outcome.state.records[1]
        assert failed.verdict == Verdict.STAGE_FAILED
        assert failed.decisions is None
        assert [a["attempt"] for a in audit if a["stage"] == "plan_decision"] == ["initial", "repair"]
        assert outcome.state.best_iteration == 0
        assert plans == [0]

    def test_rejected_decisions_are_recorded_not_run(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        only_sales = '{"join_order": [{"table": "sales", "role": "base"}]}'
        backend = script(("storage_design", "{}"), ("plan_decision", only_sales))
        outcome, _, plans = optimize(query, sales_tables, sales_catalog, backend, loop_config(2, patience=5),
                                     measure=medians({0: 100}))
        rejected = outcome.state.records[1]
        assert rejected.verdict == Verdict.REJECTED
        assert any(d.code == "MISSING_TABLE" for d in rejected.feedback.diagnostics)
        assert rejected.error.startswith("plan decisions rejected:")
        assert plans == [0]

    def test_budget_breach_stops_the_loop(self, sales_tables, sales_catalog):
        query = bind(JOIN_SQL, sales_catalog)
        backend = script(("storage_design", "{}"), ("plan_decision", PLAN_A))
        outcome, _, _ = optimize(query, sales_tables, sales_catalog, backend, loop_config(5, patience=5),
                                 measure=medians({0: 100}), ledger=CostLedger(token_budget=1))
        assert outcome.state.stop_reason == StopReason.BUDGET_STOPPED
        assert len(outcome.state.records) == 1
        assert outcome.state.stop_detail

    def test_budget_stopped_state_for_unstarted_queries(self, sales_catalog):
        state = budget_stopped_state(bind(JOIN_SQL, sales_catalog, "q7"), loop_config(), "dollar budget")
        report = QueryReport.budget_stopped(state)
        assert (report.query_id, report.status, report.stop_reason) == ("q7", "budget_stopped", "budget_stopped")


# ===================================================================
# REPORTS AND RUN DIRECTORIES
# ===================================================================

def bench_report(median=10.0, verdict="correct"):
    rows = [IterationRow(iteration=0, source="defaults", verdict=verdict, median_ms=median, samples_ms=[median])]
    query = QueryReport(query_id="q1", status="ok", stop_reason="max_iterations", best_iteration=0,
                        baseline_ms=median, best_ms=median, iterations=rows, plan="plan q1:")
    return BenchReport(run_id="r", backend="scripted_replay", model="scripted", queries=[query])


class TestReports:
    def test_replay_view_ignores_timings(self):
        assert bench_report(10.0).replay_view() == bench_report(12.5).replay_view()
        assert bench_report(verdict="correct").replay_view() != bench_report(verdict="timeout").replay_view()

    def test_recorded_timings(self):
        timings = recorded_timings(bench_report(10.0))
        assert timings[("q1", 0)].median_ms == 10.0

    def test_totals_and_markdown(self):
        report = bench_report(10.0)
        report.queries.append(QueryReport.failed("q2", "SqlSyntaxError: bad"))
        totals = report.totals()
        assert (totals["queries"], totals["ok"], totals["failed"]) == (2, 1, 1)
        text = render_markdown(report)
        assert "## q2" in text
        assert "SqlSyntaxError: bad" in text

    def test_run_directory_round_trip(self, tmp_path):
        run = RunDirectory.create(tmp_path, "r")
        run.save_config(loop_config())
        run.write_report(bench_report())
        run.audit({"stage": "plan_decision", "response_text": "{}"})
        again = RunDirectory.open(tmp_path / "r")
        assert again.load_config() == loop_config()
        assert again.load_report().replay_view() == bench_report().replay_view()
        with pytest.raises(ConfigError):
            RunDirectory.create(tmp_path, "r")
        with pytest.raises(ConfigError):
            RunDirectory.open(tmp_path / "absent")


class TestBenchmark:
    def test_run_then_replay(self, data_dir, tmp_path):
        config = RunConfig(data_dir=data_dir, queries=[QUERIES_DIR / "q6.sql"], runs_dir=tmp_path / "runs",
                           run_id="first", budgets=Budgets(max_iterations=1),
                           measurement=Measurement(warmups=0, repeats=1))
        backend = script(("workload_analysis", '{"bottlenecks": ["lineitem scan"]}'))
        report, run = asyncio.run(run_benchmark(config, backend=backend))
        assert [q.status for q in report.queries] == ["ok"]
        assert report.queries[0].stop_reason == "max_iterations"
        assert run.report_json.exists() and run.report_md.exists()
        assert run.plan_path("q6", 0).exists()
        assert (run.root / "storage_design.json").exists()
        lines = run.transcript.read_text().splitlines()
        assert jsonio.loads(lines[0])["stage"] == Stage.WORKLOAD_ANALYSIS.value

        original, replayed, replay_dir = asyncio.run(replay_run(run.root, tmp_path / "replays"))
        assert replayed.replay_of == "first"
        assert original.replay_view() == replayed.replay_view()
        assert replayed.queries[0].baseline_ms == original.queries[0].baseline_ms

    def test_unparseable_query_is_a_failed_entry(self, data_dir, tmp_path):
        bad = tmp_path / "broken.sql"
        bad.write_text("SELECT x FROM nowhere")
        config = RunConfig(data_dir=data_dir, queries=[bad], runs_dir=tmp_path / "runs",
                           budgets=Budgets(max_iterations=1))
        report, _ = asyncio.run(run_benchmark(config, backend=script()))
        assert report.queries[0].status == "failed"
        assert report.failed


# ===================================================================
# CONFIGURATION
# ===================================================================

class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.budgets.query_timeout == 300
        assert config.budgets.agent_timeout == 1800
        assert (config.measurement.warmups, config.measurement.repeats) == (2, 5)
        assert (config.epsilon, config.patience) == (0.05, 2)

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{"budgets": {"max_iterations": 8}, "seed": 3}')
        config = load_run_config(path, {"budgets.max_iterations": 4, "seed": None, "measurement.repeats": 9})
        assert config.budgets.max_iterations == 4
        assert config.seed == 3
        assert config.measurement.repeats == 9

    @pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"budgets": {"max_iterations": 0}}',
                                         '{"surprise": true}'])
    def test_bad_files(self, tmp_path, content):
        path = tmp_path / "run.json"
        path.write_text(content)
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_missing_file_and_bad_override(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.json")
        with pytest.raises(ConfigError):
            load_run_config(None, {"seed": 2, "seed.value": 1})

    def test_replay_backend_needs_a_transcript(self):
        with pytest.raises(ConfigError):
            load_run_config(None, {"backend.kind": "scripted_replay"})


# ===================================================================
# CLI
# ===================================================================

runner = CliRunner()


class TestCli:
    def test_version(self):
        result = runner.invoke(app, ["version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_schema(self):
        result = runner.invoke(app, ["schema", "run-config"])
        assert result.exit_code == 0
        assert "budgets" in jsonio.loads(result.output)["properties"]
        assert runner.invoke(app, ["schema", "nonsense"]).exit_code == EXIT_CONFIG

    def test_config_errors_exit_two(self, tmp_path):
        result = runner.invoke(app, ["bench", "--config", str(tmp_path / "absent.json")])
        assert result.exit_code == EXIT_CONFIG

    def test_oracle(self, data_dir):
        result = runner.invoke(app, ["oracle", str(QUERIES_DIR / "q6.sql"), "--data-dir", str(data_dir),
                                     "--format", "json"])
        assert result.exit_code == 0, result.output
        assert "columns" in jsonio.loads(result.output)


# ===================================================================
# LIVE
# ===================================================================

@pytest.mark.live
@pytest.mark.skipif(not os.getenv("QUERYSYNTH_API_KEY"), reason="QUERYSYNTH_API_KEY not set")
def test_live_plan_decision():
    sections = [Section("🔎 QUERY q:", {"sql": "SELECT COUNT(*) FROM sales", "tables": ["sales"]}, 0)]
    message = asyncio.run(run_stage(Stage.PLAN_DECISION, StageCall(RemoteChatBackend()), sections, 120.0,
                                    query_id="q"))
    assert message.decisions() is not None
