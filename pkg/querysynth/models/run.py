"""
RunConfig: everything a benchmark or optimization run needs besides secrets.

Loaded from JSON; every field can be overridden from the command line with a
dotted key (`budgets.max_iterations=3`).
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from querysynth import jsonio
from querysynth.errors import ConfigError
from querysynth.reference.compare import Tolerances

DEFAULT_QUERY_TIMEOUT_S = 300.0
DEFAULT_AGENT_TIMEOUT_S = 1800.0


class ModelPrice(BaseModel):
    """Dollars per million tokens."""
    input_per_million: float = Field(ge=0.0)
    output_per_million: float = Field(ge=0.0)


DEFAULT_PRICES: Dict[str, ModelPrice] = {
    "gpt-4o": ModelPrice(input_per_million=2.50, output_per_million=10.00),
    "gpt-4o-mini": ModelPrice(input_per_million=0.15, output_per_million=0.60),
    "gpt-4.1": ModelPrice(input_per_million=2.00, output_per_million=8.00),
}


class Budgets(BaseModel):
    max_iterations: int = Field(default=5, ge=1)   # iteration 0 (defaults) included
    query_timeout: float = Field(default=DEFAULT_QUERY_TIMEOUT_S, gt=0)
    agent_timeout: float = Field(default=DEFAULT_AGENT_TIMEOUT_S, gt=0)
    token_budget: Optional[int] = Field(default=None, gt=0)
    dollar_budget: Optional[float] = Field(default=None, gt=0)


class Measurement(BaseModel):
    warmups: int = Field(default=2, ge=0)
    repeats: int = Field(default=5, ge=1)


class BackendChoice(BaseModel):
    kind: Literal["remote_chat", "scripted_replay"] = "remote_chat"
    transcript: Optional[Path] = None
    model: Optional[str] = None        # overrides QUERYSYNTH_MODEL

    @model_validator(mode="after")
    def _transcript_for_replay(self):
        if self.kind == "scripted_replay" and self.transcript is None:
            raise ValueError("scripted_replay needs a transcript file")
        return self


class RunConfig(BaseModel):
    data_dir: Path = Path("data")               # stored tables (ingest output)
    schema_file: Optional[Path] = None
    queries: List[Path] = Field(default_factory=list)
    runs_dir: Path = Path("runs")
    run_id: Optional[str] = None
    backend: BackendChoice = Field(default_factory=BackendChoice)
    budgets: Budgets = Field(default_factory=Budgets)
    measurement: Measurement = Field(default_factory=Measurement)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    thread_count: Optional[int] = Field(default=None, ge=1)
    seed: int = 0
    epsilon: float = Field(default=0.05, ge=0.0)
    patience: int = Field(default=2, ge=1)
    target_ms: Optional[float] = Field(default=None, gt=0)
    max_concurrent_pipelines: int = Field(default=4, ge=1)
    prices: Dict[str, ModelPrice] = Field(default_factory=lambda: dict(DEFAULT_PRICES))

    model_config = {"extra": "forbid"}


def _set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override '{key}': '{part}' is not a section")
    node[parts[-1]] = value


def load_run_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """File values, then overrides; None-valued overrides are ignored."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = jsonio.read_json(Path(path))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid run configuration:\n{exc}") from None
