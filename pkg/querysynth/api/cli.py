"""
Command-line surface.

Exit codes: 0 success, 1 per-query failures (or a replay that diverged),
2 configuration errors.
"""
import asyncio
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from rich.table import Table

from querysynth import __version__, jsonio
from querysynth.analyzer.hardware import probe_hardware
from querysynth.analyzer.profile import build_workload_profile, profile_json, save_profile
from querysynth.config import storage_settings
from querysynth.errors import ConfigError, QuerySynthError
from querysynth.logs import console, setup_logging
from querysynth.models.catalog import load_catalog
from querysynth.models.messages import STAGE_MODELS, Stage
from querysynth.models.plan import PlanDecisionSet
from querysynth.models.report import BenchReport
from querysynth.models.run import RunConfig, load_run_config
from querysynth.reference.executor import execute_reference
from querysynth.services.bench import load_query, load_workspace, replay_run, run_benchmark
from querysynth.storage.datagen import generate_tables, write_dataset
from querysynth.storage.ingest import Dialect, ingest_delimited
from querysynth.storage.persist import save_table

app = typer.Typer(add_completion=False, no_args_is_help=True,
                  help="Agent-driven query plan synthesis over a columnar engine.")

EXIT_OK, EXIT_FAILURES, EXIT_CONFIG = 0, 1, 2


@contextmanager
def exit_codes():
    try:
        yield
    except ConfigError as exc:
        console.print(f"❌ configuration error: {exc}")
        raise typer.Exit(EXIT_CONFIG)
    except QuerySynthError as exc:
        console.print(f"❌ {type(exc).__name__}: {exc}")
        raise typer.Exit(EXIT_FAILURES)


@app.callback()
def main(verbose: int = typer.Option(0, "--verbose", "-v", count=True, help="More log output (-vv for debug)."),
         quiet: bool = typer.Option(False, "--quiet", "-q", help="Warnings and errors only.")):
    setup_logging(0 if quiet else 1 + verbose)


@app.command()
def version():
    """Print the package version."""
    typer.echo(__version__)


# ===================================================================
# DATA
# ===================================================================

@app.command()
def generate(out: Path = typer.Option(Path("tpch"), help="Where to write <table>.tbl and schema.json."),
             scale: float = typer.Option(0.01, help="Fractional TPC-H scale factor."),
             seed: int = typer.Option(0),
             data_dir: Optional[Path] = typer.Option(None, help="Also store the tables here, ready to query.")):
    """Generate a seeded TPC-H-shaped dataset."""
    with exit_codes():
        paths = write_dataset(out, scale=scale, seed=seed)
        console.print(f"✅ wrote {len(paths)} tables to {out}")
        if data_dir is not None:
            for table in generate_tables(scale, seed, storage_settings().zone_map_block_size).values():
                save_table(table, data_dir)
            console.print(f"✅ stored tables under {data_dir}")


@app.command()
def ingest(schema: Path = typer.Option(..., help="Catalog JSON ({\"tables\": [...]})."),
           input_dir: Path = typer.Option(..., "--input", help="Directory holding <table>.tbl files."),
           data_dir: Path = typer.Option(Path("data"), help="Storage root to write."),
           delimiter: Optional[str] = typer.Option(None), header: bool = typer.Option(False),
           null_token: Optional[str] = typer.Option(None), block_size: Optional[int] = typer.Option(None)):
    """Parse delimited files into encoded columnar storage."""
    settings = storage_settings()
    dialect = Dialect(delimiter=delimiter or settings.delimiter, header=header,
                      null_token=settings.null_token if null_token is None else null_token)
    with exit_codes():
        catalog = load_catalog(schema)
        for name, table_schema in catalog.tables.items():
            candidates = [input_dir / f"{name}.tbl", input_dir / f"{name}.csv"]
            source = next((p for p in candidates if p.exists()), None)
            if source is None:
                raise ConfigError(f"no input file for table '{name}' in {input_dir}")
            table = ingest_delimited(source, table_schema, dialect, block_size or settings.zone_map_block_size)
            save_table(table, data_dir)
            console.print(f"✅ {name}: {table.row_count} rows, "
                          f"{', '.join(f'{c}={d.describe()}' for c, d in table.encodings().items())}")


@app.command()
def analyze(queries: List[Path] = typer.Argument(None, help="Query files whose predicates to profile."),
            data_dir: Path = typer.Option(Path("data")),
            schema_file: Optional[Path] = typer.Option(None),
            out: Optional[Path] = typer.Option(None, help="Write the profile here instead of stdout."),
            probe: bool = typer.Option(True, help="Read hardware from the OS (else defaults)."),
            core_count: Optional[int] = typer.Option(None, help="Override the detected core count.")):
    """Emit the WorkloadProfile JSON."""
    with exit_codes():
        ws = load_workspace(RunConfig(data_dir=data_dir, schema_file=schema_file))
        bound = [load_query(q, ws.catalog) for q in queries or []]
        overrides = {"core_count": core_count} if core_count else None
        profile = build_workload_profile(ws.tables, bound, probe_hardware(overrides, probe=probe))
        if out is not None:
            save_profile(profile, out)
            console.print(f"✅ profile written to {out}")
        else:
            typer.echo(profile_json(profile))


@app.command()
def oracle(query: Path, data_dir: Path = typer.Option(Path("data")),
           schema_file: Optional[Path] = typer.Option(None),
           fmt: str = typer.Option("text", "--format", help="text or json")):
    """Run a query on the reference interpreter only."""
    with exit_codes():
        ws = load_workspace(RunConfig(data_dir=data_dir, schema_file=schema_file))
        result = execute_reference(load_query(query, ws.catalog), ws.tables)
        typer.echo(result.dumps() if fmt == "json" else result.to_text(), nl=False)


# ===================================================================
# OPTIMIZATION
# ===================================================================

def _config(config: Optional[Path], queries: Optional[List[Path]], flags: Dict[str, Any]) -> RunConfig:
    overrides = dict(flags)
    if queries:
        overrides["queries"] = [str(q) for q in queries]
    return load_run_config(config, overrides)


def _summary(report: BenchReport) -> None:
    table = Table(title=f"run {report.run_id}")
    for col in ("query", "status", "stop", "its", "baseline ms", "best ms", "best it", "strategies"):
        table.add_column(col)
    for q in report.queries:
        table.add_row(q.query_id, q.status, q.stop_reason or "-", str(len(q.iterations)),
                      f"{q.baseline_ms:.2f}" if q.baseline_ms is not None else "-",
                      f"{q.best_ms:.2f}" if q.best_ms is not None else "-",
                      str(q.best_iteration) if q.best_iteration is not None else "-",
                      ", ".join(q.strategies) or "-")
    console.print(table)
    console.print(f"💰 {report.cost.get('input_tokens', 0)} in / {report.cost.get('output_tokens', 0)} out tokens, "
                  f"${report.cost.get('dollars', 0.0):.4f}")


def _run(cfg: RunConfig) -> int:
    report, run = asyncio.run(run_benchmark(cfg))
    _summary(report)
    console.print(f"📝 {run.report_md}")
    if report.failed:
        console.print(f"⚠️ {len(report.failed)} query(ies) failed")
        return EXIT_FAILURES
    return EXIT_OK


_FLAG_HELP = "Overrides the config file."


def _flags(data_dir, schema_file, backend, transcript, model, max_iterations, query_timeout, agent_timeout,
           token_budget, dollar_budget, warmups, repeats, thread_count, seed, epsilon, patience, target_ms,
           runs_dir, run_id, max_concurrent) -> Dict[str, Any]:
    return {
        "data_dir": data_dir and str(data_dir), "schema_file": schema_file and str(schema_file),
        "backend.kind": backend, "backend.transcript": transcript and str(transcript), "backend.model": model,
        "budgets.max_iterations": max_iterations, "budgets.query_timeout": query_timeout,
        "budgets.agent_timeout": agent_timeout, "budgets.token_budget": token_budget,
        "budgets.dollar_budget": dollar_budget, "measurement.warmups": warmups,
        "measurement.repeats": repeats, "thread_count": thread_count, "seed": seed, "epsilon": epsilon,
        "patience": patience, "target_ms": target_ms, "runs_dir": runs_dir and str(runs_dir),
        "run_id": run_id, "max_concurrent_pipelines": max_concurrent,
    }


@app.command()
def bench(queries: List[Path] = typer.Argument(None, help="Query files (replace the config's list)."),
          config: Optional[Path] = typer.Option(None, "--config", "-c", help="RunConfig JSON."),
          data_dir: Optional[Path] = typer.Option(None, help=_FLAG_HELP),
          schema_file: Optional[Path] = typer.Option(None, help=_FLAG_HELP),
          backend: Optional[str] = typer.Option(None, help="remote_chat or scripted_replay"),
          transcript: Optional[Path] = typer.Option(None, help="JSONL transcript for scripted_replay."),
          model: Optional[str] = typer.Option(None),
          max_iterations: Optional[int] = typer.Option(None), query_timeout: Optional[float] = typer.Option(None),
          agent_timeout: Optional[float] = typer.Option(None), token_budget: Optional[int] = typer.Option(None),
          dollar_budget: Optional[float] = typer.Option(None), warmups: Optional[int] = typer.Option(None),
          repeats: Optional[int] = typer.Option(None), thread_count: Optional[int] = typer.Option(None),
          seed: Optional[int] = typer.Option(None), epsilon: Optional[float] = typer.Option(None),
          patience: Optional[int] = typer.Option(None), target_ms: Optional[float] = typer.Option(None),
          runs_dir: Optional[Path] = typer.Option(None), run_id: Optional[str] = typer.Option(None),
          max_concurrent: Optional[int] = typer.Option(None)):
    """Optimize every query and write the run report."""
    flags = _flags(data_dir, schema_file, backend, transcript, model, max_iterations, query_timeout, agent_timeout,
                   token_budget, dollar_budget, warmups, repeats, thread_count, seed, epsilon, patience, target_ms,
                   runs_dir, run_id, max_concurrent)
    with exit_codes():
        cfg = _config(config, queries, flags)
        code = _run(cfg)
    raise typer.Exit(code)


@app.command()
def optimize(query: Path,
             config: Optional[Path] = typer.Option(None, "--config", "-c", help="RunConfig JSON."),
             data_dir: Optional[Path] = typer.Option(None, help=_FLAG_HELP),
             backend: Optional[str] = typer.Option(None, help="remote_chat or scripted_replay"),
             transcript: Optional[Path] = typer.Option(None),
             model: Optional[str] = typer.Option(None),
             max_iterations: Optional[int] = typer.Option(None),
             target_ms: Optional[float] = typer.Option(None),
             runs_dir: Optional[Path] = typer.Option(None)):
    """Run the optimization loop for a single query."""
    flags = _flags(data_dir, None, backend, transcript, model, max_iterations, None, None, None, None, None,
                   None, None, None, None, None, target_ms, runs_dir, None, None)
    with exit_codes():
        cfg = _config(config, None, flags)
        cfg.queries = [query]
        code = _run(cfg)
    raise typer.Exit(code)


@app.command()
def replay(run_dir: Path, runs_dir: Optional[Path] = typer.Option(None, help="Where the replay run goes.")):
    """Re-run a finished run from its transcript and compare the reports."""
    with exit_codes():
        original, report, run = asyncio.run(replay_run(run_dir, runs_dir))
        _summary(report)
        if original.replay_view() == report.replay_view():
            console.print(f"✅ replay {run.run_id} matches {run_dir.name} (timings aside)")
            code = EXIT_FAILURES if report.failed else EXIT_OK
        else:
            console.print(f"❌ replay {run.run_id} diverged from {run_dir.name}")
            code = EXIT_FAILURES
    raise typer.Exit(code)


# ===================================================================
# SCHEMAS
# ===================================================================

def published_schemas() -> Dict[str, dict]:
    out = {"run-config": RunConfig.model_json_schema(), "plan-decisions": PlanDecisionSet.model_json_schema()}
    for stage in Stage:
        out[stage.value] = STAGE_MODELS[stage].model_json_schema()
    return out


@app.command()
def schema(name: str = typer.Argument("all", help="run-config, plan-decisions, a stage name, or all")):
    """Print published JSON schemas."""
    schemas = published_schemas()
    if name != "all" and name not in schemas:
        console.print(f"❌ unknown schema '{name}'; choose from {', '.join(sorted(schemas))}")
        raise typer.Exit(EXIT_CONFIG)
    typer.echo(jsonio.dumps_str(schemas if name == "all" else schemas[name], pretty=True))
