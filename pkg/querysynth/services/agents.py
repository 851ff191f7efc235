"""
One agent call: render the stage prompt, ask the backend, pull the JSON object out
of the answer and validate it. A schema violation earns exactly one repair
round-trip carrying the validator's errors.
"""
import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from pydantic import BaseModel, ValidationError

from querysynth import jsonio
from querysynth.errors import AgentTimeout, SchemaViolation
from querysynth.models.messages import STAGE_MODELS, AgentMessage, ChatResponse, Stage
from querysynth.services.cost import CostLedger, UsageEvent
from querysynth.services.llm import ChatBackend
from querysynth.services.prompts import MAX_CONTEXT_CHARS, Prompt, Section, render_prompt

logger = logging.getLogger(__name__)

AuditSink = Callable[[dict], None]


# ===================================================================
# PARSING
# ===================================================================

def _object_end(text: str, start: int) -> Optional[int]:
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def extract_json_object(text: str) -> dict:
    """First balanced `{...}` that parses as a JSON object; prose and fences around it are ignored."""
    start = text.find("{")
    while start != -1:
        end = _object_end(text, start)
        if end is not None:
            try:
                value = jsonio.loads(text[start:end])
            except ValueError:
                value = None
            if isinstance(value, dict):
                return value
        start = text.find("{", start + 1)
    raise SchemaViolation("response contains no JSON object", ["no JSON object found"])


def _errors(exc: ValidationError) -> List[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def parse_agent_response(text: str, stage: Stage) -> BaseModel:
    data = extract_json_object(text)
    try:
        return STAGE_MODELS[stage].model_validate(data)
    except ValidationError as exc:
        errors = _errors(exc)
        raise SchemaViolation(f"{stage.value} payload invalid: {'; '.join(errors)}", errors) from None


# ===================================================================
# RUNNING A STAGE
# ===================================================================

@dataclass
class StageCall:
    backend: ChatBackend
    ledger: Optional[CostLedger] = None
    audit: Optional[AuditSink] = None
    max_chars: int = MAX_CONTEXT_CHARS


async def _ask(call: StageCall, prompt: Prompt, stage: Stage, query_id: Optional[str],
               iteration: Optional[int], attempt: str) -> ChatResponse:
    started = time.perf_counter()
    response = await call.backend.complete(prompt.system, prompt.user, stage=stage.value, query_id=query_id)
    if call.ledger is not None:
        call.ledger.add(UsageEvent(stage=stage.value, model=response.model or call.backend.model,
                                   usage=response.usage, query_id=query_id))
    if call.audit is not None:
        call.audit({
            "query": query_id,
            "stage": stage.value,
            "iteration": iteration,
            "attempt": attempt,
            "model": response.model,
            "system": prompt.system,
            "user": prompt.user,
            "response_text": response.text,
            "input_tokens": response.usage.input_tokens,
            "output_tokens": response.usage.output_tokens,
            "elapsed_ms": round((time.perf_counter() - started) * 1000, 3),
        })
    return response


async def _stage(call: StageCall, stage: Stage, sections: Sequence[Section],
                 query_id: Optional[str], iteration: Optional[int]) -> AgentMessage:
    prompt = render_prompt(stage, sections, call.max_chars)
    response = await _ask(call, prompt, stage, query_id, iteration, "initial")
    try:
        payload = parse_agent_response(response.text, stage)
        return AgentMessage(stage=stage, payload=payload, raw_text=response.text, query_id=query_id)
    except SchemaViolation as exc:
        logger.warning("⚠️ %s/%s it%s: %s; asking for a repair", query_id or "-", stage.value,
                       iteration if iteration is not None else "-", exc)
        repair_note = "\n".join(f"- {e}" for e in exc.errors) or str(exc)
    if call.ledger is not None:
        call.ledger.check()
    prompt = render_prompt(stage, sections, call.max_chars, repair=repair_note)
    response = await _ask(call, prompt, stage, query_id, iteration, "repair")
    payload = parse_agent_response(response.text, stage)
    return AgentMessage(stage=stage, payload=payload, raw_text=response.text, repaired=True,
                        query_id=query_id)


async def run_stage(stage: Stage, call: StageCall, sections: Sequence[Section], agent_timeout: float,
                    *, query_id: Optional[str] = None, iteration: Optional[int] = None) -> AgentMessage:
    """
    Wall-clock bounded agent call.

    Raises AgentTimeout, SchemaViolation (after the repair), TranscriptExhausted,
    BackendTransportError or BudgetExceeded; the loop records each as a failed stage.
    """
    if call.ledger is not None:
        call.ledger.check()
    logger.info("🤖 %s/%s it%s", query_id or "-", stage.value, iteration if iteration is not None else "-")
    try:
        return await asyncio.wait_for(_stage(call, stage, sections, query_id, iteration), agent_timeout)
    except asyncio.TimeoutError:
        logger.warning("⏱️ %s/%s timed out after %ss", query_id or "-", stage.value, agent_timeout)
        if call.audit is not None:
            call.audit({"query": query_id, "stage": stage.value, "iteration": iteration,
                        "attempt": "timeout", "response_text": None})
        raise AgentTimeout(f"{stage.value} exceeded {agent_timeout}s") from None
