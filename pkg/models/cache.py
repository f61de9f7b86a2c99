from sqlalchemy import Column, DateTime, String, Text
from sqlalchemy.sql import func

from .base import Base


class CacheEntry(Base):
    """
    Model representing one recorded LLM exchange.

    Entries are content-addressed by the sha256 of the request and are
    never updated once written.
    """
    __tablename__ = "llm_cache"

    key = Column(String(64), primary_key=True)
    kind = Column(String(16), nullable=False, index=True)
    request = Column(Text, nullable=False)
    response = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    def __repr__(self):
        return f"<CacheEntry(key={self.key[:12]}, kind='{self.kind}')>"
