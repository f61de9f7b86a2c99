import logging
from pathlib import Path
from typing import Optional, Union

import yaml
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from models.experiment import RunConfig
from models.llm import CacheMode
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Environment and .env settings for the LLM backend and logging."""
    model_config = SettingsConfigDict(env_prefix="SLATE_", env_file=".env", extra="ignore", populate_by_name=True)

    openai_api_key: Optional[str] = Field(default=None, validation_alias="OPENAI_API_KEY")
    llm_endpoint: str = "https://api.openai.com/v1"
    chat_model: str = "gpt-4o"
    embedding_model: str = "text-embedding-3-small"
    cache_url: str = "sqlite:///llm_cache.db"
    cache_mode: CacheMode = CacheMode.RECORD
    max_concurrency: int = Field(default=8, ge=1)
    rate_per_second: float = Field(default=0.0, ge=0)
    max_retries: int = Field(default=3, ge=0)
    request_timeout: float = Field(default=60.0, gt=0)
    log_level: str = "INFO"


def get_settings(**overrides) -> Settings:
    """
    Raises:
        ConfigError: if an environment variable has an invalid value
    """
    try:
        return Settings(**{key: value for key, value in overrides.items() if value is not None})
    except ValidationError as e:
        raise ConfigError(f"Invalid settings: {e}") from e


def load_run_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """
    Parse a YAML run document; no path gives the defaults.

    Raises:
        ConfigError: unreadable YAML or values failing validation
    """
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as e:
        logger.error(f"Failed to read run configuration {path}: {str(e)}")
        raise ConfigError(f"Cannot read run configuration {path}: {e}") from e
    try:
        return RunConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration {path}: {e}") from e
