from .base import Base
from .cache import CacheEntry

# Tables created by CacheStore
__all__ = [
    'Base',
    'CacheEntry',
]
