"""
Token and dollar accounting across every agent call of a run.
"""
import logging
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional

from pydantic import BaseModel, Field

from querysynth.config import backend_settings
from querysynth.errors import BudgetExceeded
from querysynth.models.messages import TokenUsage
from querysynth.models.run import ModelPrice

logger = logging.getLogger(__name__)

_FALLBACK_ENCODING = "cl100k_base"


@lru_cache(maxsize=16)
def _encoding(model: str):
    if not backend_settings().count_with_tiktoken:
        return None
    try:
        import tiktoken

        try:
            return tiktoken.encoding_for_model(model)
        except KeyError:
            return tiktoken.get_encoding(_FALLBACK_ENCODING)
    except Exception as exc:  # offline without a cached BPE file
        logger.warning("⚠️ tiktoken unavailable (%s); estimating tokens from characters", exc)
        return None


def count_tokens(text: str, model: str = "gpt-4o") -> int:
    if not text:
        return 0
    enc = _encoding(model)
    if enc is None:
        return (len(text) + 3) // 4
    return len(enc.encode(text, disallowed_special=()))


class UsageEvent(BaseModel):
    stage: str
    model: str
    usage: TokenUsage
    query_id: Optional[str] = None


class StageTotals(BaseModel):
    input_tokens: int = 0
    output_tokens: int = 0
    dollars: float = 0.0
    calls: int = 0


class CostLedger(BaseModel):
    prices: Dict[str, ModelPrice] = Field(default_factory=dict)
    token_budget: Optional[int] = None
    dollar_budget: Optional[float] = None
    stages: Dict[str, StageTotals] = Field(default_factory=dict)
    dollars: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    breach: Optional[str] = None
    unpriced_models: List[str] = Field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    @property
    def exhausted(self) -> bool:
        return self.breach is not None

    def price_for(self, model: str) -> ModelPrice:
        price = self.prices.get(model)
        if price is None:
            if model not in self.unpriced_models:
                logger.warning("⚠️ no price for model '%s'; counting it at zero", model)
                self.unpriced_models.append(model)
            return ModelPrice(input_per_million=0.0, output_per_million=0.0)
        return price

    def add(self, event: UsageEvent) -> "CostLedger":
        price = self.price_for(event.model)
        cost = (event.usage.input_tokens * price.input_per_million
                + event.usage.output_tokens * price.output_per_million) / 1_000_000
        totals = self.stages.setdefault(event.stage, StageTotals())
        totals.input_tokens += event.usage.input_tokens
        totals.output_tokens += event.usage.output_tokens
        totals.dollars += cost
        totals.calls += 1
        self.input_tokens += event.usage.input_tokens
        self.output_tokens += event.usage.output_tokens
        self.dollars += cost
        if self.breach is None:
            if self.token_budget is not None and self.total_tokens >= self.token_budget:
                self.breach = f"token budget {self.token_budget} reached ({self.total_tokens})"
            elif self.dollar_budget is not None and self.dollars >= self.dollar_budget:
                self.breach = f"dollar budget {self.dollar_budget:.2f} reached ({self.dollars:.4f})"
            if self.breach:
                logger.warning("💸 %s", self.breach)
        return self

    def check(self) -> None:
        if self.breach is not None:
            raise BudgetExceeded(self.breach)

    def summary(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "dollars": round(self.dollars, 6),
            "breach": self.breach,
            "stages": {k: v.model_dump() for k, v in sorted(self.stages.items())},
        }


def track_cost(events: Iterable[UsageEvent], prices: Mapping[str, ModelPrice],
               token_budget: Optional[int] = None, dollar_budget: Optional[float] = None) -> CostLedger:
    ledger = CostLedger(prices=dict(prices), token_budget=token_budget, dollar_budget=dollar_budget)
    for event in events:
        ledger.add(event)
    return ledger
