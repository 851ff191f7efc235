"""
Chat backends used by the agent stages.

remote_chat talks to an OpenAI-compatible endpoint; scripted_replay returns recorded
responses from a JSON-lines transcript, in order, and fails loudly when it runs out.
"""
import asyncio
import logging
from collections import deque
from pathlib import Path
from typing import Deque, Dict, Iterable, List, Optional, Protocol

from openai import (APIConnectionError, APITimeoutError, AsyncOpenAI, InternalServerError,
                    RateLimitError)
from tenacity import (AsyncRetrying, RetryError, retry_if_exception_type, stop_after_attempt,
                      wait_exponential)

from querysynth import jsonio
from querysynth.config import BackendSettings, backend_settings
from querysynth.errors import BackendTransportError, ConfigError, TranscriptExhausted
from querysynth.models.messages import ChatResponse, TokenUsage
from querysynth.models.run import BackendChoice
from querysynth.services.cost import count_tokens

logger = logging.getLogger(__name__)

TRANSIENT_ERRORS = (APIConnectionError, APITimeoutError, RateLimitError, InternalServerError)


class ChatBackend(Protocol):
    kind: str
    model: str

    async def complete(self, system: str, user: str, *, stage: str,
                       query_id: Optional[str] = None) -> ChatResponse:
        ...


# ===================================================================
# REMOTE CHAT
# ===================================================================

class RemoteChatBackend:
    kind = "remote_chat"

    def __init__(self, settings: Optional[BackendSettings] = None, model: Optional[str] = None,
                 client: Optional[AsyncOpenAI] = None):
        self.settings = settings or backend_settings()
        if client is None and not self.settings.api_key:
            raise ConfigError("❌ QUERYSYNTH_API_KEY (or OPENAI_API_KEY) is missing")
        self.model = model or self.settings.model
        # retries are ours (tenacity), not the SDK's
        self.client = client or AsyncOpenAI(
            api_key=self.settings.api_key,
            base_url=self.settings.base_url,
            timeout=self.settings.request_timeout,
            max_retries=0,
        )

    async def complete(self, system: str, user: str, *, stage: str,
                       query_id: Optional[str] = None) -> ChatResponse:
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ]
        try:
            async for attempt in AsyncRetrying(
                stop=stop_after_attempt(self.settings.max_retries + 1),
                wait=wait_exponential(multiplier=0.5, max=8),
                retry=retry_if_exception_type(TRANSIENT_ERRORS),
                reraise=True,
            ):
                with attempt:
                    if attempt.retry_state.attempt_number > 1:
                        logger.warning("⚠️ %s/%s: retrying chat call (attempt %d)",
                                       query_id or "-", stage, attempt.retry_state.attempt_number)
                    response = await self.client.chat.completions.create(
                        model=self.model,
                        messages=messages,
                        temperature=self.settings.temperature,
                        max_tokens=self.settings.max_tokens,
                    )
        except TRANSIENT_ERRORS as exc:
            raise BackendTransportError(f"chat call failed after retries: {exc}") from exc
        except RetryError as exc:
            raise BackendTransportError(f"chat call failed after retries: {exc}") from exc

        text = response.choices[0].message.content or ""
        usage = response.usage
        if usage is not None:
            tokens = TokenUsage(input_tokens=usage.prompt_tokens, output_tokens=usage.completion_tokens)
        else:
            tokens = TokenUsage(input_tokens=count_tokens(system + user, self.model),
                                output_tokens=count_tokens(text, self.model), estimated=True)
        return ChatResponse(text=text, usage=tokens, model=self.model)


# ===================================================================
# SCRIPTED REPLAY
# ===================================================================

class ScriptedReplayBackend:
    """
    Entries are `{stage, response_text}` objects, optionally tagged with `query`.
    Tagged entries form one queue per query; untagged entries share a global queue.
    Each queue is consumed strictly in order and the next entry's stage must match.
    """
    kind = "scripted_replay"

    def __init__(self, entries: Iterable[dict], model: str = "scripted", delay_s: float = 0.0):
        self.model = model
        self.delay_s = delay_s
        self._shared: Deque[dict] = deque()
        self._per_query: Dict[str, Deque[dict]] = {}
        for i, entry in enumerate(entries):
            if "stage" not in entry or "response_text" not in entry:
                raise ConfigError(f"transcript entry {i + 1} needs 'stage' and 'response_text'")
            query = entry.get("query")
            if query:
                self._per_query.setdefault(query, deque()).append(entry)
            else:
                self._shared.append(entry)

    @classmethod
    def from_file(cls, path: Path, model: str = "scripted") -> "ScriptedReplayBackend":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"transcript {path} not found")
        entries: List[dict] = []
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entries.append(jsonio.loads(line))
            except ValueError as exc:
                raise ConfigError(f"transcript {path}:{n} is not valid JSON: {exc}") from None
        # audit logs also carry failed calls; those produced no response to replay
        return cls([e for e in entries if e.get("response_text") is not None], model=model)

    @property
    def remaining(self) -> int:
        return len(self._shared) + sum(len(q) for q in self._per_query.values())

    def _queue_for(self, query_id: Optional[str]) -> Deque[dict]:
        if query_id and query_id in self._per_query:
            return self._per_query[query_id]
        return self._shared

    async def complete(self, system: str, user: str, *, stage: str,
                       query_id: Optional[str] = None) -> ChatResponse:
        if self.delay_s:
            await asyncio.sleep(self.delay_s)
        queue = self._queue_for(query_id)
        if not queue:
            raise TranscriptExhausted(f"transcript exhausted at {query_id or '-'}/{stage}")
        entry = queue[0]
        if entry["stage"] != stage:
            raise TranscriptExhausted(
                f"transcript out of step at {query_id or '-'}: next entry is "
                f"'{entry['stage']}', pipeline asked for '{stage}'")
        queue.popleft()
        text = entry["response_text"]
        usage = TokenUsage(input_tokens=count_tokens(system + user, self.model),
                           output_tokens=count_tokens(text, self.model), estimated=True)
        return ChatResponse(text=text, usage=usage, model=self.model)


def make_backend(choice: BackendChoice, settings: Optional[BackendSettings] = None) -> ChatBackend:
    if choice.kind == "scripted_replay":
        return ScriptedReplayBackend.from_file(choice.transcript, model=choice.model or "scripted")
    return RemoteChatBackend(settings=settings, model=choice.model)
