import hashlib
import threading
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
import orjson
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.instance import Instance
from models.statement import Statement, UtilityValue, as_utility


class CacheMode(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


def request_key(kind: str, body: Dict[str, Any]) -> str:
    """sha256 over the sorted-key JSON of a request body tagged with its kind."""
    return hashlib.sha256(orjson.dumps({"kind": kind, **body}, option=orjson.OPT_SORT_KEYS)).hexdigest()


class ChatMessage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Literal["system", "user", "assistant"]
    content: str


class LlmRequest(BaseModel):
    """
    One chat completion request.

    nonce only enters the cache key: it separates repeated samples of an
    identical prompt (re-asks, the second run of a group generator).
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["chat"] = "chat"
    model: str
    messages: Tuple[ChatMessage, ...]
    temperature: Optional[float] = None
    max_tokens: Optional[int] = Field(default=None, ge=1)
    logprobs: bool = False
    top_logprobs: Optional[int] = Field(default=None, ge=0, le=20)
    nonce: int = 0

    def payload(self) -> Dict[str, Any]:
        """Request body for the chat completions endpoint."""
        body: Dict[str, Any] = {
            "model": self.model,
            "messages": [message.model_dump() for message in self.messages],
        }
        if self.temperature is not None:
            body["temperature"] = self.temperature
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        if self.logprobs:
            body["logprobs"] = True
            if self.top_logprobs:
                body["top_logprobs"] = self.top_logprobs
        return body

    def cache_key(self) -> str:
        return request_key(self.kind, self.model_dump(mode="json", exclude={"kind"}))


class TokenLogprob(BaseModel):
    token: str
    logprob: float


class LlmResponse(BaseModel):
    """Completion text plus the top alternatives for its first token, when requested."""
    text: str
    top_logprobs: Optional[List[TokenLogprob]] = None


class EmbeddingRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["embedding"] = "embedding"
    model: str
    texts: Tuple[str, ...]

    def payload(self) -> Dict[str, Any]:
        return {"model": self.model, "input": list(self.texts), "encoding_format": "float"}

    def cache_key(self) -> str:
        return request_key(self.kind, self.model_dump(mode="json", exclude={"kind"}))


class EmbeddingResponse(BaseModel):
    vectors: List[List[float]]


REQUEST_TYPES = {"chat": LlmRequest, "embedding": EmbeddingRequest}
RESPONSE_TYPES = {"chat": LlmResponse, "embedding": EmbeddingResponse}


class EmbeddingState(BaseModel):
    """
    Both agent embeddings of a run.

    text_embedding is n x d from the embedding endpoint; rating_embedding is
    n x k with every entry an agent's 1-7 rating of one issue statement.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    text_embedding: np.ndarray
    rating_embedding: np.ndarray
    issue_statements: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.text_embedding.ndim != 2 or self.rating_embedding.ndim != 2:
            raise ValueError("embeddings must be two-dimensional")
        if self.text_embedding.shape[0] != self.rating_embedding.shape[0]:
            raise ValueError("both embeddings must have one row per agent")
        if self.rating_embedding.size and (self.rating_embedding.min() < 1 or self.rating_embedding.max() > 7):
            raise ValueError("ratings must lie in [1, 7]")
        return self

    def space(self, name: str) -> np.ndarray:
        if name == "text":
            return self.text_embedding
        if name == "rating":
            return self.rating_embedding
        raise ValueError(f"Unknown embedding space: {name}")


DRUG_REVIEW_COSTS = (80, 70, 60, 50, 40, 36, 32, 28, 24, 20, 16, 12, 10, 8, 6, 4, 2)
BOWLING_GREEN_COSTS = (80, 60, 40, 36, 32, 28, 24, 20, 16, 12, 8, 4)
PROSE_LEVELS = ("5.5", "5", "4.5", "4", "3.5", "3", "2", "1", "0")


class ProseDatasetConfig(BaseModel):
    """Cost list, level list and length rules of one PROSE dataset."""
    model_config = ConfigDict(frozen=True)

    name: str
    budget: int = Field(ge=1)
    cost_list: Tuple[int, ...]
    level_list: Tuple[UtilityValue, ...]
    min_statement_length: int = Field(default=0, ge=0)
    specificity_coefficient: UtilityValue = Fraction(1)
    unit_cost: bool = False

    @field_validator("level_list", mode="before")
    @classmethod
    def _exact_levels(cls, value):
        return tuple(as_utility(level) for level in value)

    @field_validator("specificity_coefficient", mode="before")
    @classmethod
    def _exact_coefficient(cls, value):
        value = as_utility(value)
        if value < 0:
            raise ValueError("specificity coefficient must be nonnegative")
        return value

    @model_validator(mode="after")
    def _check_costs(self):
        if not self.cost_list or any(not 1 <= cost <= self.budget for cost in self.cost_list):
            raise ValueError(f"cost list entries must lie in [1, {self.budget}]")
        return self

    @classmethod
    def drug_review(cls, name: str = "drug_review") -> "ProseDatasetConfig":
        return cls(name=name, budget=160, cost_list=DRUG_REVIEW_COSTS, level_list=PROSE_LEVELS,
                   min_statement_length=10)

    @classmethod
    def bowling_green(cls) -> "ProseDatasetConfig":
        return cls(name="bowling_green", budget=164, cost_list=BOWLING_GREEN_COSTS, level_list=PROSE_LEVELS,
                   min_statement_length=8)

    def as_unit_cost(self, statements: int = 5) -> "ProseDatasetConfig":
        """Same levels, k statements of any length instead of a word budget."""
        return self.model_copy(update={"name": f"{self.name}_unit_cost", "budget": statements,
                                       "cost_list": (1,), "min_statement_length": 0, "unit_cost": True})


@dataclass
class ProseRunState:
    """
    Mutable state shared by the PROSE generators during one run.

    The bank only grows; disc is the run's memoized discriminative query.
    """
    instance: Instance
    embeddings: EmbeddingState
    config: ProseDatasetConfig
    disc: Callable[[int, Statement], UtilityValue]
    bank: List[Statement] = field(default_factory=list)
    scoring_failures: List[Tuple[int, int]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add_to_bank(self, statements: List[Statement]):
        with self.lock:
            known = {statement.id for statement in self.bank}
            self.bank.extend(statement for statement in statements if statement.id not in known)

    def snapshot(self) -> List[Statement]:
        with self.lock:
            return list(self.bank)
