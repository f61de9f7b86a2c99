import logging
from typing import Optional

from dependencies.config import Settings
from models.llm import CacheMode
from services.db import CacheStore
from services.llm_client import ChatClient, LlmBackend
from utils.rate_limit import TokenBucket


class BackendFactory:
    def __init__(self, settings: Settings):
        """
        Build the response cache, HTTP client and LLM backend from settings.

        Args:
            settings (Settings): endpoint, models, cache and concurrency
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.settings = settings
        self._store: Optional[CacheStore] = None

    def get_cache_store(self) -> CacheStore:
        if self._store is None:
            self._store = CacheStore(self.settings.cache_url)
        return self._store

    def get_client(self) -> Optional[ChatClient]:
        settings = self.settings
        if settings.cache_mode == CacheMode.REPLAY:
            return None
        if not settings.openai_api_key:
            self.logger.warning("OPENAI_API_KEY is not set; requests go out unauthenticated")
        limiter = TokenBucket(settings.rate_per_second) if settings.rate_per_second > 0 else None
        return ChatClient(settings.llm_endpoint,
                          api_key=settings.openai_api_key,
                          timeout=settings.request_timeout,
                          max_retries=settings.max_retries,
                          rate_limiter=limiter)

    def get_backend(self) -> LlmBackend:
        settings = self.settings
        store = None if settings.cache_mode == CacheMode.LIVE else self.get_cache_store()
        self.logger.info(f"LLM backend: {settings.chat_model} in {settings.cache_mode.value} mode")
        return LlmBackend(self.get_client(), store,
                          mode=settings.cache_mode,
                          chat_model=settings.chat_model,
                          embedding_model=settings.embedding_model,
                          max_concurrency=settings.max_concurrency)
