import logging
import threading
from pathlib import Path
from typing import Any, Dict, Optional, Union

import orjson
from sqlalchemy import create_engine, func, select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from models.base import Base
from models.cache import CacheEntry
from models.llm import REQUEST_TYPES
from utils.exceptions import ConfigError, DatasetError


class CacheStore:
    def __init__(self, db_url: str):
        """
        Open the response cache and create its table.

        Args:
            db_url (str): SQLAlchemy URL, e.g. sqlite:///llm_cache.db or sqlite://
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        kwargs: Dict[str, Any] = {}
        if db_url.startswith("sqlite"):
            kwargs["connect_args"] = {"check_same_thread": False}
            if db_url in ("sqlite://", "sqlite:///:memory:"):
                kwargs["poolclass"] = StaticPool

        try:
            self.engine = create_engine(db_url, **kwargs)
            Base.metadata.create_all(bind=self.engine)
        except SQLAlchemyError as e:
            self.logger.error(f"Failed to open response cache at {db_url}: {str(e)}")
            raise ConfigError(f"Cannot open response cache {db_url}: {e}") from e

        self.SessionLocal = sessionmaker(bind=self.engine, expire_on_commit=False)
        self._lock = threading.Lock()
        self.logger.info(f"Response cache open at {db_url} ({self.count()} entries)")

    def get(self, key: str) -> Optional[Dict[str, Any]]:
        """Recorded response body for a key, or None."""
        with self._lock, self.SessionLocal() as session:
            entry = session.get(CacheEntry, key)
            return orjson.loads(entry.response) if entry is not None else None

    def put(self, key: str, kind: str, request: Dict[str, Any], response: Dict[str, Any]) -> bool:
        """
        Record a response unless the key is already present.

        Returns:
            bool: True if a new entry was written
        """
        with self._lock, self.SessionLocal() as session:
            if session.get(CacheEntry, key) is not None:
                return False
            session.add(CacheEntry(key=key,
                                   kind=kind,
                                   request=orjson.dumps(request, option=orjson.OPT_SORT_KEYS).decode(),
                                   response=orjson.dumps(response, option=orjson.OPT_SORT_KEYS).decode()))
            try:
                session.commit()
            except SQLAlchemyError as e:
                session.rollback()
                self.logger.error(f"Failed to record cache entry {key}: {str(e)}")
                raise
            return True

    def count(self) -> int:
        with self._lock, self.SessionLocal() as session:
            return session.scalar(select(func.count()).select_from(CacheEntry))

    def export_jsonl(self, path: Union[str, Path]) -> int:
        """Write every entry as a {kind, request, response} line, ordered by key."""
        path = Path(path)
        written = 0
        with self._lock, self.SessionLocal() as session, path.open("wb") as handle:
            for entry in session.scalars(select(CacheEntry).order_by(CacheEntry.key)):
                record = {"kind": entry.kind,
                          "request": orjson.loads(entry.request),
                          "response": orjson.loads(entry.response)}
                handle.write(orjson.dumps(record, option=orjson.OPT_SORT_KEYS) + b"\n")
                written += 1
        self.logger.info(f"Exported {written} cache entries to {path}")
        return written

    def import_jsonl(self, path: Union[str, Path]) -> int:
        """
        Load a fixture file; keys are recomputed from the requests.

        Returns:
            int: number of new entries

        Raises:
            DatasetError: if a line is not a valid record
        """
        path = Path(path)
        added = 0
        with path.open("rb") as handle:
            for line_number, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = orjson.loads(line)
                    request = REQUEST_TYPES[record["kind"]].model_validate(record["request"])
                except (orjson.JSONDecodeError, KeyError, ValueError) as e:
                    raise DatasetError(f"{path}:{line_number}: not a cache record ({e})") from e
                added += self.put(request.cache_key(), request.kind,
                                  request.model_dump(mode="json"), record["response"])
        self.logger.info(f"Imported {added} new cache entries from {path}")
        return added
