"""
Run directory layout:

    runs/<id>/transcript.jsonl        every prompt and response, in call order
    runs/<id>/plans/<query>/<n>.txt   the physical plan of each executed iteration
    runs/<id>/report.json, report.md
    runs/<id>/storage_design.json     encodings and indexes materialized during the run
    runs/<id>/profile.json            the WorkloadProfile the agents saw
    runs/<id>/run_config.json         the effective RunConfig (replay starts from it)
"""
import logging
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

from querysynth import jsonio
from querysynth.errors import ConfigError
from querysynth.models.report import BenchReport
from querysynth.models.run import RunConfig

logger = logging.getLogger(__name__)


def new_run_id() -> str:
    return f"{datetime.now().strftime('%Y%m%d-%H%M%S')}-{uuid.uuid4().hex[:6]}"


class RunDirectory:
    def __init__(self, root: Path):
        self.root = Path(root)

    @classmethod
    def create(cls, runs_dir: Path, run_id: Optional[str] = None) -> "RunDirectory":
        run = cls(Path(runs_dir) / (run_id or new_run_id()))
        if run.transcript.exists():
            raise ConfigError(f"run directory {run.root} already holds a transcript")
        (run.root / "plans").mkdir(parents=True, exist_ok=True)
        logger.info("📁 run directory %s", run.root)
        return run

    @classmethod
    def open(cls, root: Path) -> "RunDirectory":
        run = cls(root)
        if not run.config_path.exists():
            raise ConfigError(f"{root} is not a run directory (no run_config.json)")
        return run

    @property
    def run_id(self) -> str:
        return self.root.name

    @property
    def transcript(self) -> Path:
        return self.root / "transcript.jsonl"

    @property
    def config_path(self) -> Path:
        return self.root / "run_config.json"

    @property
    def report_json(self) -> Path:
        return self.root / "report.json"

    @property
    def report_md(self) -> Path:
        return self.root / "report.md"

    def plan_path(self, query_id: str, iteration: int) -> Path:
        return self.root / "plans" / query_id / f"{iteration}.txt"

    # the CLI process is the only writer, so appends need no locking
    def audit(self, entry: dict) -> None:
        jsonio.append_jsonl(self.transcript, entry)

    def write_plan(self, query_id: str, iteration: int, text: str) -> None:
        path = self.plan_path(query_id, iteration)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")

    def write_artifact(self, name: str, obj: Any) -> None:
        jsonio.write_json(self.root / name, obj)

    def save_config(self, config: RunConfig) -> None:
        self.write_artifact("run_config.json", config.model_dump(mode="json"))

    def load_config(self) -> RunConfig:
        return RunConfig.model_validate(jsonio.read_json(self.config_path))

    def write_report(self, report: BenchReport) -> None:
        jsonio.write_json(self.report_json, report.to_json())
        self.report_md.write_text(render_markdown(report), encoding="utf-8")

    def load_report(self) -> BenchReport:
        if not self.report_json.exists():
            raise ConfigError(f"{self.root} has no report.json")
        return BenchReport.model_validate(jsonio.read_json(self.report_json))


def _ms(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def render_markdown(report: BenchReport) -> str:
    totals = report.totals()
    lines = [
        f"# Run {report.run_id}",
        "",
        f"Backend: `{report.backend}` · model: `{report.model}`"
        + (f" · replay of `{report.replay_of}`" if report.replay_of else ""),
        "",
        "| query | status | stop | iterations | baseline ms | best ms | speedup | best it | strategies | indexes |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for q in report.queries:
        speedup = f"{q.speedup:.2f}x" if q.speedup else "-"
        lines.append(
            f"| {q.query_id} | {q.status} | {q.stop_reason or '-'} | {len(q.iterations)} | "
            f"{_ms(q.baseline_ms)} | {_ms(q.best_ms)} | {speedup} | "
            f"{q.best_iteration if q.best_iteration is not None else '-'} | "
            f"{', '.join(q.strategies) or '-'} | {', '.join(q.indexes_used) or '-'} |"
        )
    lines += [
        "",
        f"**Totals:** {totals['ok']}/{totals['queries']} ok, {totals['failed']} failed, "
        f"{totals['budget_stopped']} budget-stopped; baseline {totals['baseline_ms']:.2f} ms, "
        f"best {totals['best_ms']:.2f} ms.",
        "",
        f"**Cost:** {report.cost.get('input_tokens', 0)} input + {report.cost.get('output_tokens', 0)} "
        f"output tokens, ${report.cost.get('dollars', 0.0):.4f}.",
    ]
    for q in report.queries:
        lines += ["", f"## {q.query_id}", ""]
        if q.error:
            lines += [f"❌ {q.error}", ""]
        if not q.iterations:
            continue
        lines += ["| it | source | verdict | median ms | notes |", "|---|---|---|---|---|"]
        for row in q.iterations:
            notes = "; ".join(row.storage_changes + row.diagnostics)
            if row.error:
                notes = (notes + "; " if notes else "") + row.error.splitlines()[0]
            marker = " ⭐" if row.iteration == q.best_iteration else ""
            lines.append(f"| {row.iteration}{marker} | {row.source} | {row.verdict} | "
                         f"{_ms(row.median_ms)} | {notes.replace('|', '/') or '-'} |")
        if q.plan:
            lines += ["", "```", q.plan, "```"]
    return "\n".join(lines) + "\n"
