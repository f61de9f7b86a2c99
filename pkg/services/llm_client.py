import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar, Union

import httpx
import numpy as np
import openai
from openai import OpenAI
from pydantic import BaseModel

from models.llm import (CacheMode, ChatMessage, EmbeddingRequest, EmbeddingResponse, LlmRequest,
                        LlmResponse, TokenLogprob)
from services.db import CacheStore
from utils.exceptions import CacheMissError, ConfigError, TransportError
from utils.rate_limit import TokenBucket

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ChatClient:
    def __init__(self,
                 base_url: str,
                 api_key: Optional[str] = None,
                 timeout: float = 60.0,
                 max_retries: int = 3,
                 rate_limiter: Optional[TokenBucket] = None,
                 transport: Optional[httpx.BaseTransport] = None):
        """
        OpenAI-compatible chat-completions and embeddings client.

        Args:
            base_url (str): endpoint root, e.g. https://api.openai.com/v1
            api_key (str): bearer key; local endpoints accept a placeholder
            max_retries (int): SDK retries after the first attempt
            transport: optional httpx transport (tests pass httpx.MockTransport)
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        http_client = httpx.Client(transport=transport, timeout=timeout) if transport is not None else None
        self.client = OpenAI(base_url=base_url,
                             api_key=api_key or "unset",
                             timeout=timeout,
                             max_retries=max_retries,
                             http_client=http_client)
        self.rate_limiter = rate_limiter

    def _send(self, what: str, create: Callable[..., T], **kwargs) -> T:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        try:
            return create(**kwargs)
        except openai.APIStatusError as e:
            self.logger.error(f"{what} rejected: {e.status_code} {str(e)[:200]}")
            raise TransportError(f"{what} failed with status {e.status_code}") from e
        except openai.APIError as e:
            self.logger.error(f"{what} failed: {str(e)}")
            raise TransportError(f"{what} failed: {e}") from e

    def complete(self, request: LlmRequest) -> LlmResponse:
        completion = self._send("chat completion", self.client.chat.completions.create, **request.payload())
        try:
            choice = completion.choices[0]
            text = choice.message.content or ""
            top = None
            tokens = (choice.logprobs.content if choice.logprobs is not None else None) or []
            if tokens:
                top = [TokenLogprob(token=item.token, logprob=item.logprob) for item in tokens[0].top_logprobs or []]
                if not top:
                    top = [TokenLogprob(token=tokens[0].token, logprob=tokens[0].logprob)]
        except (AttributeError, IndexError, TypeError) as e:
            raise TransportError(f"Malformed chat completion response: {e}") from e
        return LlmResponse(text=text, top_logprobs=top)

    def embed(self, request: EmbeddingRequest) -> EmbeddingResponse:
        result = self._send("embedding", self.client.embeddings.create, **request.payload())
        try:
            rows = sorted(result.data, key=lambda item: item.index)
            return EmbeddingResponse(vectors=[list(row.embedding) for row in rows])
        except (AttributeError, TypeError) as e:
            raise TransportError(f"Malformed embedding response: {e}") from e

    def close(self):
        self.client.close()


def _cached_call(request: Union[LlmRequest, EmbeddingRequest],
                 response_type: type,
                 store: Optional[CacheStore],
                 mode: CacheMode,
                 call: Optional[Callable[[], BaseModel]]):
    mode = CacheMode(mode)
    key = request.cache_key()
    if mode != CacheMode.LIVE:
        if store is None:
            raise ConfigError(f"Cache mode {mode.value} needs a cache store")
        cached = store.get(key)
        if cached is not None:
            return response_type.model_validate(cached)
        if mode == CacheMode.REPLAY:
            raise CacheMissError(key, f"({request.kind} request for model {request.model})")
    if call is None:
        raise ConfigError(f"Cache mode {mode.value} needs a network client")

    response = call()
    if mode == CacheMode.RECORD:
        store.put(key, request.kind, request.model_dump(mode="json"), response.model_dump(mode="json"))
    return response


def chat(request: LlmRequest,
         store: Optional[CacheStore],
         mode: Union[CacheMode, str],
         client: Optional[ChatClient] = None) -> LlmResponse:
    """
    Answer a chat request according to the cache mode.

    live calls the endpoint and never touches the cache; record serves hits
    and persists misses; replay serves hits only.

    Raises:
        CacheMissError: replay mode and the request was never recorded
        TransportError: the endpoint kept failing
    """
    return _cached_call(request, LlmResponse, store, mode,
                        (lambda: client.complete(request)) if client is not None else None)


def embed(request: EmbeddingRequest,
          store: Optional[CacheStore],
          mode: Union[CacheMode, str],
          client: Optional[ChatClient] = None) -> EmbeddingResponse:
    return _cached_call(request, EmbeddingResponse, store, mode,
                        (lambda: client.embed(request)) if client is not None else None)


class LlmBackend:
    """Chat and embedding access for the PROSE services: models, cache mode and concurrency."""

    def __init__(self,
                 client: Optional[ChatClient],
                 store: Optional[CacheStore],
                 mode: Union[CacheMode, str] = CacheMode.RECORD,
                 chat_model: str = "gpt-4o",
                 embedding_model: str = "text-embedding-3-small",
                 max_concurrency: int = 8,
                 embedding_batch: int = 256):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.client = client
        self.store = store
        self.mode = CacheMode(mode)
        self.chat_model = chat_model
        self.embedding_model = embedding_model
        self.max_concurrency = max(1, max_concurrency)
        self.embedding_batch = embedding_batch

    def chat(self,
             system: str,
             user: str,
             temperature: Optional[float] = None,
             max_tokens: Optional[int] = None,
             logprobs: bool = False,
             top_logprobs: Optional[int] = None,
             nonce: int = 0) -> LlmResponse:
        request = LlmRequest(model=self.chat_model,
                             messages=(ChatMessage(role="system", content=system),
                                       ChatMessage(role="user", content=user)),
                             temperature=temperature,
                             max_tokens=max_tokens,
                             logprobs=logprobs,
                             top_logprobs=top_logprobs,
                             nonce=nonce)
        return chat(request, self.store, self.mode, self.client)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Embedding matrix with one row per text."""
        rows: List[List[float]] = []
        for start in range(0, len(texts), self.embedding_batch):
            request = EmbeddingRequest(model=self.embedding_model,
                                       texts=tuple(texts[start:start + self.embedding_batch]))
            rows.extend(embed(request, self.store, self.mode, self.client).vectors)
        return np.asarray(rows, dtype=np.float64).reshape(len(texts), -1) if rows else np.zeros((0, 0))

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply fn to every item with bounded concurrency, keeping input order."""
        items = list(items)
        if self.max_concurrency == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=min(self.max_concurrency, len(items))) as pool:
            return list(pool.map(fn, items))
